//! Euler–Maruyama simulation of coupled pairs `(X, Y)`.
//!
//! Synchronous coupling shares the noise; reflection coupling mirrors it
//! along `e = σ⁻¹(X−Y)/|σ⁻¹(X−Y)|`; hybrid runs synchronously until the
//! σ-distance first drops to η and reflects from then on. Once the pair
//! meets, `Y` is glued to `X`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{dot, DriftModel};
use crate::error::{invalid, Error, Result};
use crate::lyapunov::AuxiliaryFunction;
use crate::rng::{self, Purpose, StreamRng};

/// Separation below which a reflection direction is not formed.
pub const MIN_SEPARATION: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coupling {
    Synchronous,
    Reflection,
    Hybrid { eta: f64 },
}

impl Coupling {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Synchronous => "synchronous",
            Self::Reflection => "reflection",
            Self::Hybrid { .. } => "hybrid",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub merge_threshold: f64,
    pub n_paths: usize,
    pub rng_seed: u64,
    pub coupling: Coupling,
    pub record_stride: usize,
}

impl SimConfig {
    /// Defaults: `δ_merge = 10⁻²√dt`, every step recorded.
    pub fn new(dt: f64, horizon: f64, n_paths: usize, rng_seed: u64, coupling: Coupling) -> Self {
        Self { dt, horizon, merge_threshold: 1e-2 * dt.sqrt(), n_paths, rng_seed, coupling, record_stride: 1 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.dt <= self.horizon) {
            return Err(invalid(format!("need 0 < dt ≤ horizon, got dt = {}, horizon = {}", self.dt, self.horizon)));
        }
        if !(self.merge_threshold > 0.0) {
            return Err(invalid("merge threshold must be positive"));
        }
        if self.n_paths == 0 || self.record_stride == 0 {
            return Err(invalid("n_paths and record_stride must be at least 1"));
        }
        if let Coupling::Hybrid { eta } = self.coupling {
            if !(eta > 0.0) {
                return Err(invalid(format!("hybrid η must be positive, got {eta}")));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }

    /// Times of the recorded slices: every `record_stride` steps, plus the
    /// final step.
    pub fn slice_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut v: Vec<usize> = (0..=n).step_by(self.record_stride).collect();
        if *v.last().expect("non-empty") != n {
            v.push(n);
        }
        v
    }
}

/// One step with shared noise: `x' = x + σdw + b(x)dt`, same `dw` for `y`.
pub fn step_synchronous(model: &DriftModel, x: &[f64], y: &[f64], dw: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let d = model.dim();
    let mut sdw = vec![0.0; d];
    model.sigma().apply(dw, &mut sdw);
    let mut s = Stepper::new(d);
    let (mut x1, mut y1) = (x.to_vec(), y.to_vec());
    s.euler(model, &mut x1, &sdw, dt);
    s.euler(model, &mut y1, &sdw, dt);
    (x1, y1)
}

/// One reflection step: `y' = y + σ(I − 2ee*)dw + b(y)dt`.
pub fn step_reflection(model: &DriftModel, x: &[f64], y: &[f64], dw: &[f64], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = model.dim();
    let mut s = Stepper::new(d);
    let (mut x1, mut y1) = (x.to_vec(), y.to_vec());
    let r = s.direction(model, x, y);
    if r < MIN_SEPARATION {
        return Err(Error::DegenerateDirection(r));
    }
    s.reflect_step(model, &mut x1, &mut y1, dw, dt);
    Ok((x1, y1))
}

struct Stepper {
    e: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
    sdw: Vec<f64>,
    b: Vec<f64>,
}

impl Stepper {
    fn new(d: usize) -> Self {
        Self { e: vec![0.0; d], z: vec![0.0; d], w: vec![0.0; d], sdw: vec![0.0; d], b: vec![0.0; d] }
    }

    fn euler(&mut self, model: &DriftModel, x: &mut [f64], sdw: &[f64], dt: f64) {
        model.drift_into(x, &mut self.b);
        for i in 0..x.len() {
            x[i] += sdw[i] + self.b[i] * dt;
        }
    }

    /// Stores the unit direction in `e` and returns `|σ⁻¹(x−y)|`.
    fn direction(&mut self, model: &DriftModel, x: &[f64], y: &[f64]) -> f64 {
        for i in 0..x.len() {
            self.z[i] = x[i] - y[i];
        }
        model.sigma().apply_inverse(&self.z, &mut self.e);
        let r = dot(&self.e, &self.e).sqrt();
        if r > 0.0 {
            self.e.iter_mut().for_each(|v| *v /= r);
        }
        r
    }

    fn separation(&mut self, model: &DriftModel, x: &[f64], y: &[f64]) -> f64 {
        for i in 0..x.len() {
            self.z[i] = x[i] - y[i];
        }
        model.sigma().apply_inverse(&self.z, &mut self.w);
        dot(&self.w, &self.w).sqrt()
    }

    /// Reflection step using the direction already stored in `e`.
    fn reflect_step(&mut self, model: &DriftModel, x: &mut [f64], y: &mut [f64], dw: &[f64], dt: f64) {
        let d = x.len();
        model.sigma().apply(dw, &mut self.sdw);
        // y' = y + σ(dw − 2(e·dw)e) + b(y)dt
        model.drift_into(y, &mut self.b);
        let proj = 2.0 * dot(&self.e, dw);
        for i in 0..d {
            self.w[i] = dw[i] - proj * self.e[i];
        }
        model.sigma().apply(&self.w, &mut self.z);
        for i in 0..d {
            y[i] += self.z[i] + self.b[i] * dt;
        }
        let sdw = std::mem::take(&mut self.sdw);
        self.euler(model, x, &sdw, dt);
        self.sdw = sdw;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingPath {
    pub times: Vec<f64>,
    /// Row-major `times.len() × d`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub r: Vec<f64>,
    pub coupling_time: Option<f64>,
    pub regime_switch_time: Option<f64>,
}

impl CouplingPath {
    pub fn x_at(&self, k: usize, d: usize) -> &[f64] {
        &self.x[k * d..(k + 1) * d]
    }

    pub fn y_at(&self, k: usize, d: usize) -> &[f64] {
        &self.y[k * d..(k + 1) * d]
    }
}

fn draw_normals(rng: &mut StreamRng, scale: f64, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = scale * rng.sample::<f64, _>(StandardNormal);
    }
}

fn run_path(model: &DriftModel, cfg: &SimConfig, x0: &[f64], y0: &[f64], index: usize) -> Result<CouplingPath> {
    let d = model.dim();
    let mut rng = rng::stream(cfg.rng_seed, Purpose::CouplingPaths, index as u64);
    let mut st = Stepper::new(d);
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    let mut dw = vec![0.0; d];
    let sqdt = cfg.dt.sqrt();

    let slices = cfg.slice_steps();
    let mut rec = CouplingPath {
        times: Vec::with_capacity(slices.len()),
        x: Vec::with_capacity(slices.len() * d),
        y: Vec::with_capacity(slices.len() * d),
        r: Vec::with_capacity(slices.len()),
        coupling_time: None,
        regime_switch_time: None,
    };

    let r0 = st.separation(model, &x, &y);
    let mut reflecting = match cfg.coupling {
        Coupling::Synchronous => false,
        Coupling::Reflection => true,
        Coupling::Hybrid { eta } => r0 <= eta,
    };
    if reflecting && matches!(cfg.coupling, Coupling::Hybrid { .. }) {
        rec.regime_switch_time = Some(0.0);
    }
    let mut merged = r0 <= cfg.merge_threshold;
    if merged {
        y.copy_from_slice(&x);
        rec.coupling_time = Some(0.0);
    }
    let mut next_slice = 0;
    let record = |k: usize, x: &[f64], y: &[f64], r: f64, rec: &mut CouplingPath| {
        rec.times.push(k as f64 * cfg.dt);
        rec.x.extend_from_slice(x);
        rec.y.extend_from_slice(y);
        rec.r.push(r);
    };
    if slices[0] == 0 {
        record(0, &x, &y, if merged { 0.0 } else { r0 }, &mut rec);
        next_slice = 1;
    }

    let n = cfg.n_steps();
    for k in 0..n {
        let t1 = (k + 1) as f64 * cfg.dt;
        draw_normals(&mut rng, sqdt, &mut dw);
        let r1;
        if merged {
            model.sigma().apply(&dw, &mut st.sdw);
            let sdw = std::mem::take(&mut st.sdw);
            st.euler(model, &mut x, &sdw, cfg.dt);
            st.sdw = sdw;
            y.copy_from_slice(&x);
            r1 = 0.0;
        } else if reflecting {
            let r = st.direction(model, &x, &y);
            if r < MIN_SEPARATION {
                // numerically met already
                merged = true;
                rec.coupling_time = Some(k as f64 * cfg.dt);
                y.copy_from_slice(&x);
                model.sigma().apply(&dw, &mut st.sdw);
                let sdw = std::mem::take(&mut st.sdw);
                st.euler(model, &mut x, &sdw, cfg.dt);
                st.sdw = sdw;
                y.copy_from_slice(&x);
                r1 = 0.0;
            } else {
                st.reflect_step(model, &mut x, &mut y, &dw, cfg.dt);
                let rn = st.separation(model, &x, &y);
                // the component along e changed sign: the distance process hit 0
                let crossed = dot(&st.w, &st.e) <= 0.0;
                // a Brownian bridge of dr = 2dW from r to rn touches 0
                // with probability exp(−r·rn/(2dt))
                let bridge = !crossed && rng.random::<f64>() < (-r * rn / (2.0 * cfg.dt)).exp();
                if rn <= cfg.merge_threshold || crossed || bridge {
                    merged = true;
                    rec.coupling_time = Some(t1);
                    y.copy_from_slice(&x);
                    r1 = 0.0;
                } else {
                    r1 = rn;
                }
            }
        } else {
            model.sigma().apply(&dw, &mut st.sdw);
            let sdw = std::mem::take(&mut st.sdw);
            st.euler(model, &mut x, &sdw, cfg.dt);
            st.euler(model, &mut y, &sdw, cfg.dt);
            st.sdw = sdw;
            let rn = st.separation(model, &x, &y);
            if rn <= cfg.merge_threshold {
                merged = true;
                rec.coupling_time = Some(t1);
                y.copy_from_slice(&x);
                r1 = 0.0;
            } else {
                if let Coupling::Hybrid { eta } = cfg.coupling {
                    if rn <= eta {
                        reflecting = true;
                        rec.regime_switch_time = Some(t1);
                    }
                }
                r1 = rn;
            }
        }
        if !x.iter().chain(&y).all(|v| v.is_finite()) {
            return Err(Error::SimulationDiverged { path: index, time: t1 });
        }
        if next_slice < slices.len() && slices[next_slice] == k + 1 {
            record(k + 1, &x, &y, r1, &mut rec);
            next_slice += 1;
        }
    }
    Ok(rec)
}

fn check_start(model: &DriftModel, cfg: &SimConfig, x0: &[f64], y0: &[f64]) -> Result<()> {
    cfg.validate()?;
    let d = model.dim();
    if x0.len() != d || y0.len() != d {
        return Err(invalid(format!("start points must have dimension {d}")));
    }
    if !x0.iter().chain(y0).all(|v| v.is_finite()) {
        return Err(invalid("start points must be finite"));
    }
    Ok(())
}

/// Path 0 of the ensemble stream.
pub fn simulate_pair(model: &DriftModel, cfg: &SimConfig, x0: &[f64], y0: &[f64]) -> Result<CouplingPath> {
    check_start(model, cfg, x0, y0)?;
    run_path(model, cfg, x0, y0, 0)
}

/// Recorded slices of an ensemble of coupled paths.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingEnsemble {
    pub dim: usize,
    pub config: SimConfig,
    pub times: Vec<f64>,
    /// Per slice, row-major `n_paths × d`.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Per slice, one σ-distance per path.
    pub r: Vec<Vec<f64>>,
    pub coupling_times: Vec<Option<f64>>,
    pub regime_switch_times: Vec<Option<f64>>,
}

pub fn simulate_ensemble(model: &DriftModel, cfg: &SimConfig, x0: &[f64], y0: &[f64]) -> Result<CouplingEnsemble> {
    check_start(model, cfg, x0, y0)?;
    let paths =
        (0..cfg.n_paths).into_par_iter().map(|i| run_path(model, cfg, x0, y0, i)).collect::<Result<Vec<_>>>()?;
    let d = model.dim();
    let times = paths[0].times.clone();
    let n_slices = times.len();
    let mut x = vec![Vec::with_capacity(cfg.n_paths * d); n_slices];
    let mut y = vec![Vec::with_capacity(cfg.n_paths * d); n_slices];
    let mut r = vec![Vec::with_capacity(cfg.n_paths); n_slices];
    for p in &paths {
        for k in 0..n_slices {
            x[k].extend_from_slice(p.x_at(k, d));
            y[k].extend_from_slice(p.y_at(k, d));
            r[k].push(p.r[k]);
        }
    }
    Ok(CouplingEnsemble {
        dim: d,
        config: cfg.clone(),
        times,
        x,
        y,
        r,
        coupling_times: paths.iter().map(|p| p.coupling_time).collect(),
        regime_switch_times: paths.iter().map(|p| p.regime_switch_time).collect(),
    })
}

pub(crate) fn find_slice(times: &[f64], t: f64) -> Result<usize> {
    let i = times.partition_point(|&s| s < t);
    [i.wrapping_sub(1), i]
        .into_iter()
        .filter(|&j| j < times.len())
        .find(|&j| (times[j] - t).abs() <= 1e-9 * t.abs().max(1.0))
        .ok_or(Error::SliceNotRecorded(t))
}

impl CouplingEnsemble {
    pub fn n_paths(&self) -> usize {
        self.coupling_times.len()
    }

    pub fn slice_index(&self, t: f64) -> Result<usize> {
        find_slice(&self.times, t)
    }

    /// Fraction of paths with `T ≤ t` at slice `k`.
    pub fn coupled_fraction(&self, k: usize) -> f64 {
        let t = self.times[k];
        let n = self.coupling_times.iter().filter(|c| c.is_some_and(|c| c <= t)).count();
        n as f64 / self.n_paths() as f64
    }

    pub fn mean_r(&self, k: usize) -> f64 {
        self.r[k].iter().sum::<f64>() / self.n_paths() as f64
    }

    /// Coupling-cost estimate `E|X_t − Y_t|^p` with its standard error.
    pub fn coupling_cost(&self, k: usize, p: f64) -> (f64, f64) {
        let d = self.dim;
        let v: Vec<f64> = self.x[k]
            .chunks(d)
            .zip(self.y[k].chunks(d))
            .map(|(a, b)| a.iter().zip(b).map(|(u, w)| (u - w) * (u - w)).sum::<f64>().sqrt().powf(p))
            .collect();
        mean_se(&v)
    }

    /// Per-slice rows `t, mean_r, mean_psi, coupled_fraction` as CSV.
    pub fn write_csv<W: std::io::Write>(&self, aux: Option<&AuxiliaryFunction>, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "mean_r", "mean_psi", "coupled_fraction"])?;
        let psi = aux.map(|a| expected_psi_decay(self, a));
        for k in 0..self.times.len() {
            let mp = psi.as_ref().map(|v| v[k].mean.to_string()).unwrap_or_default();
            w.write_record([
                self.times[k].to_string(),
                self.mean_r(k).to_string(),
                mp,
                self.coupled_fraction(k).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PsiDecayRow {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Width multiplier of the reported normal-approximation intervals.
pub const CI_Z: f64 = 3.0;

/// Monte Carlo `Eψ(r_t)` per slice; coupled paths contribute `ψ(0) = 0`.
pub fn expected_psi_decay(ens: &CouplingEnsemble, aux: &AuxiliaryFunction) -> Vec<PsiDecayRow> {
    ens.times
        .iter()
        .zip(&ens.r)
        .map(|(&t, rs)| {
            let v: Vec<f64> = rs.iter().map(|&r| aux.psi(r)).collect();
            let (mean, se) = mean_se(&v);
            PsiDecayRow { t, mean, se, ci_low: mean - CI_Z * se, ci_high: mean + CI_Z * se }
        })
        .collect()
}

/// Independent single trajectories started at `x0`.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalEnsemble {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Per slice, row-major `n_paths × d`.
    pub x: Vec<Vec<f64>>,
}

impl MarginalEnsemble {
    pub fn slice_index(&self, t: f64) -> Result<usize> {
        find_slice(&self.times, t)
    }
}

/// Uncoupled trajectories; path `i` uses stream `stream_base + i` of the
/// marginal purpose, so different bases give independent samples.
pub fn simulate_marginal(
    model: &DriftModel,
    cfg: &SimConfig,
    x0: &[f64],
    stream_base: u64,
) -> Result<MarginalEnsemble> {
    check_start(model, cfg, x0, x0)?;
    let d = model.dim();
    let slices = cfg.slice_steps();
    let sqdt = cfg.dt.sqrt();
    let paths = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(cfg.rng_seed, Purpose::MarginalPaths, stream_base + i as u64);
            let mut st = Stepper::new(d);
            let mut x = x0.to_vec();
            let (mut dw, mut sdw) = (vec![0.0; d], vec![0.0; d]);
            let mut out = Vec::with_capacity(slices.len() * d);
            let mut next = 0;
            if slices[0] == 0 {
                out.extend_from_slice(&x);
                next = 1;
            }
            for k in 0..cfg.n_steps() {
                draw_normals(&mut rng, sqdt, &mut dw);
                model.sigma().apply(&dw, &mut sdw);
                st.euler(model, &mut x, &sdw, cfg.dt);
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::SimulationDiverged { path: i, time: (k + 1) as f64 * cfg.dt });
                }
                if next < slices.len() && slices[next] == k + 1 {
                    out.extend_from_slice(&x);
                    next += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = slices.iter().map(|&k| k as f64 * cfg.dt).collect();
    let mut x = vec![Vec::with_capacity(cfg.n_paths * d); times.len()];
    for p in &paths {
        for (k, slot) in x.iter_mut().enumerate() {
            slot.extend_from_slice(&p[k * d..(k + 1) * d]);
        }
    }
    Ok(MarginalEnsemble { dim: d, times, x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{Certificate, DissipativityProfile, Family, Sigma};
    use crate::lyapunov::certify;
    use crate::special::normal_cdf;

    fn model(fam: Family, d: usize) -> DriftModel {
        DriftModel::with_identity(d, fam).unwrap()
    }

    #[test]
    fn synchronous_step_examples() {
        let m = model(Family::Linear { k: 1.0 }, 2);
        let (x, y) = step_synchronous(&m, &[1.0, 2.0], &[-1.0, 0.5], &[0.3, -0.7], 0.01);
        for i in 0..2 {
            let want = (1.0 - 0.01) * ([1.0, 2.0][i] - [-1.0, 0.5][i]);
            assert!((x[i] - y[i] - want).abs() < 1e-15);
        }
        let z = model(Family::Linear { k: 0.0 }, 1);
        let (x, y) = step_synchronous(&z, &[0.3], &[-0.4], &[1.7], 0.01);
        assert!((x[0] - y[0] - 0.7).abs() < 1e-15);
        let dw = model(Family::DoubleWell, 1);
        let (x, y) = step_synchronous(&dw, &[1.0], &[-1.0], &[0.0], 0.01);
        assert_eq!((x[0], y[0]), (1.0, -1.0));
    }

    #[test]
    fn reflection_step_examples() {
        let m = model(Family::Linear { k: 0.0 }, 1);
        let (x, y) = step_reflection(&m, &[1.0], &[0.0], &[0.2], 0.01).unwrap();
        assert_eq!((x[0], y[0]), (1.2, -0.2));
        let m2 = model(Family::Linear { k: 0.0 }, 2);
        let (x, y) = step_reflection(&m2, &[1.0, 0.0], &[0.0, 0.0], &[0.2, 0.5], 0.01).unwrap();
        assert_eq!(x, vec![1.2, 0.5]);
        assert_eq!(y, vec![-0.2, 0.5]);
        assert!(matches!(step_reflection(&m, &[1.0], &[1.0], &[0.2], 0.01), Err(Error::DegenerateDirection(_))));
    }

    #[test]
    fn synchronous_linear_is_deterministic_and_exponential() {
        let m = model(Family::Linear { k: 1.0 }, 1);
        let cfg = SimConfig::new(1e-3, 1.0, 8, 3, Coupling::Synchronous).with_stride(100);
        let ens = simulate_ensemble(&m, &cfg, &[2.0], &[-2.0]).unwrap();
        let k = ens.slice_index(1.0).unwrap();
        let first = ens.r[k][0];
        // identical up to rounding in the separately stepped coordinates
        assert!(ens.r[k].iter().all(|&r| (r - first).abs() <= 1e-13));
        assert!((first - 4.0 * (-1f64).exp()).abs() < 1e-2);
    }

    #[test]
    fn ensemble_reproducible_and_matches_pair() {
        let m = model(Family::DoubleWell, 2);
        let cfg = SimConfig::new(1e-2, 1.0, 16, 9, Coupling::Reflection).with_stride(10);
        let a = simulate_ensemble(&m, &cfg, &[1.0, 0.0], &[-1.0, 0.5]).unwrap();
        let b = simulate_ensemble(&m, &cfg, &[1.0, 0.0], &[-1.0, 0.5]).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.r, b.r);
        let p = simulate_pair(&m, &cfg, &[1.0, 0.0], &[-1.0, 0.5]).unwrap();
        let last = a.times.len() - 1;
        assert_eq!(p.x_at(last, 2), &a.x[last][0..2]);
        let one = simulate_ensemble(&m, &SimConfig { n_paths: 1, ..cfg.clone() }, &[1.0, 0.0], &[-1.0, 0.5]).unwrap();
        assert_eq!(one.r[last][0], p.r[last]);
    }

    #[test]
    fn after_merge_paths_coincide() {
        let m = model(Family::Linear { k: 0.0 }, 1);
        let cfg = SimConfig::new(1e-3, 2.0, 200, 1, Coupling::Reflection).with_stride(10);
        let ens = simulate_ensemble(&m, &cfg, &[0.25], &[-0.25]).unwrap();
        let mut merged = 0;
        for (i, t) in ens.coupling_times.iter().enumerate() {
            if let Some(t) = t {
                merged += 1;
                for (k, &s) in ens.times.iter().enumerate() {
                    if s >= *t {
                        assert_eq!(ens.x[k][i], ens.y[k][i]);
                        assert_eq!(ens.r[k][i], 0.0);
                    }
                }
            }
        }
        assert!(merged > 100);
    }

    #[test]
    fn brownian_reflection_survival_matches_law() {
        let m = model(Family::Linear { k: 0.0 }, 1);
        let cfg = SimConfig::new(1e-3, 1.0, 4000, 17, Coupling::Reflection).with_stride(250);
        let ens = simulate_ensemble(&m, &cfg, &[0.5], &[-0.5]).unwrap();
        for t in [0.25, 1.0] {
            let k = ens.slice_index(t).unwrap();
            let surv = 1.0 - ens.coupled_fraction(k);
            let exact = 2.0 * normal_cdf(1.0 / (2.0 * t.sqrt())) - 1.0;
            let se = (exact * (1.0 - exact) / 4000.0).sqrt();
            assert!((surv - exact).abs() <= 3.0 * se, "t={t}: {surv} vs {exact}");
        }
    }

    #[test]
    fn reflection_preserves_marginal_law() {
        let m = model(Family::Linear { k: 0.0 }, 2);
        let cfg = SimConfig::new(1e-2, 1.0, 4000, 5, Coupling::Reflection).with_stride(100);
        let ens = simulate_ensemble(&m, &cfg, &[1.0, 0.0], &[-1.0, 0.3]).unwrap();
        let k = ens.slice_index(1.0).unwrap();
        let n = 4000.0;
        for j in 0..2 {
            let v: Vec<f64> = ens.y[k].chunks(2).map(|p| p[j]).collect();
            let (mean, se) = mean_se(&v);
            assert!((mean - [-1.0, 0.3][j]).abs() <= 4.0 * se);
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
            // Var of a sample variance of N(·, 1): 2/(n−1)
            assert!((var - 1.0).abs() <= 4.0 * (2.0 / (n - 1.0)).sqrt(), "{var}");
        }
    }

    #[test]
    fn hybrid_is_deterministic_before_switch() {
        // the separation is noise-free only when b(x) − b(y) depends on x − y alone
        let m = model(Family::Linear { k: 1.0 }, 1);
        let cfg = SimConfig::new(1e-3, 2.0, 64, 2, Coupling::Hybrid { eta: 1.0 }).with_stride(10);
        let ens = simulate_ensemble(&m, &cfg, &[2.0], &[-2.0]).unwrap();
        let switch: Vec<f64> = ens.regime_switch_times.iter().map(|t| t.unwrap()).collect();
        assert!(switch.iter().all(|&t| t == switch[0]));
        assert!((switch[0] - 4f64.ln()).abs() < 5e-3);
        for (k, &t) in ens.times.iter().enumerate() {
            if t < switch[0] {
                let r0 = ens.r[k][0];
                assert!(ens.r[k].iter().all(|&r| (r - r0).abs() <= 1e-12));
            }
        }
    }

    #[test]
    fn double_well_hybrid_switches_by_t0() {
        let m = model(Family::DoubleWell, 1);
        let eta = 2.0 * 2f64.sqrt();
        let cfg = SimConfig::new(1e-3, 1.0, 64, 2, Coupling::Hybrid { eta }).with_stride(10);
        let ens = simulate_ensemble(&m, &cfg, &[5.0], &[-5.0]).unwrap();
        assert!(ens.regime_switch_times.iter().all(|t| t.unwrap() <= 0.5 + 2e-3));
    }

    #[test]
    fn psi_decay_starts_exactly_and_respects_envelope() {
        let m = model(Family::Linear { k: 1.0 }, 1);
        let p = DissipativityProfile::from_model(&m).unwrap().with_certificate(Certificate::linear(0.5, 0.0).unwrap());
        let (aux, cert) = certify(&p, None, &[1.0]).unwrap();
        let cfg = SimConfig::new(1e-3, 2.0, 2000, 8, Coupling::Reflection).with_stride(100);
        let ens = simulate_ensemble(&m, &cfg, &[1.0], &[-1.0]).unwrap();
        let rows = expected_psi_decay(&ens, &aux);
        assert!((rows[0].mean / aux.psi(2.0) - 1.0).abs() < 1e-13 && rows[0].se < 1e-13);
        for row in &rows {
            assert!(row.ci_high <= aux.psi(2.0) * (-cert.lambda * row.t).exp() + 1e-12);
        }
    }

    #[test]
    fn halving_dt_is_first_order_for_linear() {
        let m = model(Family::Linear { k: 1.0 }, 1);
        let exact = 4.0 * (-1f64).exp();
        let err = |dt: f64| {
            let cfg = SimConfig::new(dt, 1.0, 1, 0, Coupling::Synchronous);
            let p = simulate_pair(&m, &cfg, &[2.0], &[-2.0]).unwrap();
            (p.r.last().unwrap() - exact).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((ratio - 2.0).abs() < 0.6, "{ratio}");
    }

    #[test]
    fn marginal_streams_are_independent_of_base() {
        let m = model(Family::Linear { k: 1.0 }, 1);
        let cfg = SimConfig::new(1e-2, 1.0, 4, 1, Coupling::Synchronous);
        let a = simulate_marginal(&m, &cfg, &[0.0], 0).unwrap();
        let b = simulate_marginal(&m, &cfg, &[0.0], 4).unwrap();
        let a2 = simulate_marginal(&m, &cfg, &[0.0], 0).unwrap();
        assert_eq!(a.x, a2.x);
        assert_ne!(a.x.last(), b.x.last());
    }

    #[test]
    fn non_scalar_sigma_reflection_keeps_distance_process() {
        let s = Sigma::from_rows(&[vec![1.0, 0.3], vec![0.0, 0.8]]).unwrap();
        let m = DriftModel::new(2, Family::Linear { k: 0.0 }, s).unwrap();
        let (x, y) = step_reflection(&m, &[1.0, 1.0], &[0.0, 0.0], &[0.1, -0.05], 0.01).unwrap();
        // σ⁻¹(x'−y') stays on the line of σ⁻¹(x−y): r' = r + 2 e·dw
        let mut w0 = [0.0; 2];
        let mut w1 = [0.0; 2];
        m.sigma().apply_inverse(&[1.0, 1.0], &mut w0);
        m.sigma().apply_inverse(&[x[0] - y[0], x[1] - y[1]], &mut w1);
        let cross = w0[0] * w1[1] - w0[1] * w1[0];
        assert!(cross.abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let m = model(Family::Superconvex { alpha: 3.0 }, 1);
        let cfg = SimConfig::new(0.5, 5.0, 1, 0, Coupling::Synchronous);
        assert!(matches!(simulate_pair(&m, &cfg, &[10.0], &[-10.0]), Err(Error::SimulationDiverged { .. })));
    }
}
