//! Experiments: each turns a spec into comparison rows between Monte Carlo
//! estimates and the certified bounds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ExperimentKind, ExperimentSpec};
use super::report::{Metadata, Report, Row};
use super::stats::{linear_fit, mean_sd, permutation_floor, variance_se};
use crate::coupling::{expected_psi_decay, simulate_ensemble, simulate_marginal, Coupling, SimConfig, CI_Z};
use crate::drift::{linspace, Certificate, DissipativityProfile, DriftModel, Family};
use crate::error::{Error, Result};
use crate::lyapunov::{certify, gauge, hitting_time_bound, wp_bound, AuxiliaryFunction, RateCertificate};
use crate::rng::{self, Purpose};
use crate::special::normal_cdf;
use crate::transport::{
    tv_upper_from_coupling, wasserstein_exact_1d, wasserstein_exact_assignment, wasserstein_gauge, EmpiricalMeasure,
    Ground,
};

/// Stream offset of the prefactor-validation runs, far from the paths of the
/// main experiment.
const PREFACTOR_STREAMS: u64 = 1 << 40;
/// Paths per start point in the prefactor validation.
const PREFACTOR_PATHS: usize = 256;
const PREFACTOR_TIMES: [f64; 3] = [1.0, 2.0, 5.0];

/// A finished experiment: the report plus the objects behind its artifacts.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Report,
    pub aux: Option<AuxiliaryFunction>,
    pub rate: Option<RateCertificate>,
}

struct Run<'a> {
    spec: &'a ExperimentSpec,
    model: DriftModel,
    rows: Vec<Row>,
    derived: BTreeMap<String, f64>,
    aux: Option<AuxiliaryFunction>,
    rate: Option<RateCertificate>,
}

pub fn run(spec: &ExperimentSpec) -> Result<Outcome> {
    spec.validate()?;
    let mut run =
        Run { spec, model: spec.model.build()?, rows: Vec::new(), derived: BTreeMap::new(), aux: None, rate: None };
    match spec.kind {
        ExperimentKind::Contraction => {
            let cert = spec.certificate.certificate()?.ok_or(Error::MissingCertificate)?;
            run.contraction(cert)?
        }
        ExperimentKind::UniformDissipative => run.uniform_dissipative()?,
        ExperimentKind::FlatPotential => run.flat_potential()?,
        ExperimentKind::Superconvex => run.superconvex()?,
        ExperimentKind::Invariant => run.invariant()?,
        ExperimentKind::TvDecay => run.tv_decay()?,
    }
    run.finish()
}

/// `v<crate version>-g<first 7 hex digits of the spec hash>`.
pub fn version_string(spec: &ExperimentSpec) -> Result<String> {
    let digest = Sha256::digest(spec.to_toml()?.as_bytes());
    let hex: String = digest.iter().take(4).map(|b| format!("{b:02x}")).collect();
    Ok(format!("v{}-g{}", env!("CARGO_PKG_VERSION"), &hex[..7]))
}

/// Writes `report.csv`, `report.json` and, when available, `psi.csv` and
/// `certificate.json` into `dir`.
pub fn write_outputs(outcome: &Outcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    outcome.report.write_csv(BufWriter::new(File::create(dir.join("report.csv"))?))?;
    std::fs::write(dir.join("report.json"), outcome.report.to_json()?)?;
    if let (Some(aux), Some(rate)) = (&outcome.aux, &outcome.rate) {
        aux.write_csv(rate.lambda, BufWriter::new(File::create(dir.join("psi.csv"))?))?;
    }
    if let Some(rate) = &outcome.rate {
        std::fs::write(dir.join("certificate.json"), serde_json::to_string_pretty(rate)?)?;
    }
    Ok(())
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn root(v: f64, p: f64) -> f64 {
    v.max(0.0).powf(1.0 / p)
}

/// Plug-in `W_p` between two row-major samples, averaged over disjoint
/// batches of `n` points; returns `(mean, standard error)`.
fn plug_in(xs: &[f64], ys: &[f64], d: usize, p: f64, n: usize, batches: usize, quantile: bool) -> Result<(f64, f64)> {
    let avail = (xs.len() / d).min(ys.len() / d);
    let n = n.min(avail).max(1);
    let b = batches.min(avail / n).max(1);
    let vals = (0..b)
        .into_par_iter()
        .map(|k| {
            let a = EmpiricalMeasure::uniform(d, xs[k * n * d..(k + 1) * n * d].to_vec())?;
            let c = EmpiricalMeasure::uniform(d, ys[k * n * d..(k + 1) * n * d].to_vec())?;
            if quantile {
                wasserstein_exact_1d(&a, &c, p)
            } else {
                Ok(wasserstein_exact_assignment(&a, &c, &Ground::Lp(p))?.0)
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let (m, sd) = mean_sd(&vals);
    Ok((m, sd / (b as f64).sqrt()))
}

impl Run<'_> {
    fn finish(self) -> Result<Outcome> {
        let spec = self.spec;
        let metadata = Metadata {
            kind: spec.kind.name().to_string(),
            seed: spec.seed,
            dt: spec.sim.dt,
            n_paths: spec.sim.n_paths,
            version: version_string(spec)?,
            certificate: self.rate.as_ref().map(serde_json::to_value).transpose()?,
            derived: self.derived,
            spec: serde_json::to_value(spec)?,
        };
        Ok(Outcome { report: Report { metadata, rows: self.rows }, aux: self.aux, rate: self.rate })
    }

    fn config(&self, default: Coupling) -> Result<SimConfig> {
        let cfg = self.spec.sim.config(self.spec.seed, self.spec.sim.coupling_or(default)?)?;
        self.spec.check_times(&cfg)?;
        Ok(cfg)
    }

    /// Validates `cert` against the analytic profile, then builds ψ and λ.
    fn certified(&mut self, cert: Certificate) -> Result<RateCertificate> {
        let profile = DissipativityProfile::from_model(&self.model)?.with_certificate(cert);
        let hi = (10.0 * cert.eta).max(50.0);
        let check = profile.check_certificate(&linspace(cert.eta.max(1e-6), hi, 1000))?;
        if !check.pass {
            return Err(Error::CertificateInvalid(format!(
                "κ(r) + c r^θ reaches {:.3e} on [η, {hi}]",
                check.max_margin
            )));
        }
        let (aux, rate) = certify(&profile, self.spec.certificate.eps, &self.spec.p)?;
        self.derived.insert("lambda".into(), rate.lambda);
        self.derived.insert("eps".into(), rate.eps);
        let cond = self.model.sigma().cond();
        for &p in &self.spec.p {
            self.derived.insert(format!("prefactor_p{p}"), rate.prefactor(cond, p)?.value);
        }
        self.aux = Some(aux);
        self.rate = Some(rate.clone());
        Ok(rate)
    }

    fn contraction(&mut self, cert: Certificate) -> Result<()> {
        let spec = self.spec;
        let (x0, y0) = (spec.x0.as_slice(), spec.y0()?);
        let rate = self.certified(cert)?;
        let default = if cert.theta > 1.0 { Coupling::Hybrid { eta: cert.eta } } else { Coupling::Reflection };
        let cfg = self.config(default)?;
        let model = &self.model;
        let d = model.dim();
        let ens = simulate_ensemble(model, &cfg, x0, y0)?;
        let marg = simulate_marginal(model, &cfg, y0, 0)?;
        let tr = spec.transport;
        for &t in &spec.times {
            let k = ens.slice_index(t)?;
            for &p in &spec.p {
                let bound = wp_bound(&rate, model, p, t, x0, y0, None)?;
                let (m, se) = ens.coupling_cost(k, p);
                let ci = (root(m - CI_Z * se, p), root(m + CI_Z * se, p));
                self.rows.push(Row::at_most("wp_bound", "upper (coupling)", root(m, p), ci, bound).at(t).with_p(p));
                let (e, se) = plug_in(&ens.x[k], &marg.x[k], d, p, tr.n_assignment, tr.batches, false)?;
                let ci = ((e - CI_Z * se).max(0.0), e + CI_Z * se);
                self.rows.push(Row::at_most("wp_bound", "plug-in (empirical OT)", e, ci, bound).at(t).with_p(p));
            }
        }

        let aux = self.aux.as_ref().expect("set by certified");
        let mut diff = vec![0.0; d];
        for i in 0..d {
            diff[i] = x0[i] - y0[i];
        }
        let psi0 = aux.psi(model.sigma().inv_norm(&diff));
        let decay = expected_psi_decay(&ens, aux);
        for &t in &spec.times {
            let row = &decay[ens.slice_index(t)?];
            // relative slack for the rounding of a mean over identical values at t = 0
            let envelope = psi0 * (-rate.lambda * t).exp() * (1.0 + 1e-12);
            self.rows
                .push(Row::at_most("psi_decay", "mean psi(r_t)", row.mean, (row.ci_low, row.ci_high), envelope).at(t));
        }

        // log-linear fit past the transient, where the mean is well resolved
        let (ts, logs): (Vec<f64>, Vec<f64>) = decay
            .iter()
            .filter(|r| r.t >= 0.1 * cfg.horizon && r.mean > 0.0 && r.mean > 10.0 * (r.ci_high - r.ci_low))
            .map(|r| (r.t, r.mean.ln()))
            .unzip();
        match linear_fit(&ts, &logs) {
            Some(fit) => {
                let obs = -fit.slope;
                self.derived.insert("lambda_obs".into(), obs);
                self.derived.insert("lambda_obs_se".into(), fit.slope_se);
                let ci = (obs - 2.0 * fit.slope_se, obs + 2.0 * fit.slope_se);
                self.rows.push(Row::at_least("lambda_obs", "log-linear fit of mean psi", obs, ci, rate.lambda));
            }
            None => self.rows.push(Row::info("lambda_obs", "fit window too short (points)", ts.len() as f64)),
        }

        if let (Coupling::Hybrid { .. }, true) = (cfg.coupling, cert.theta > 1.0) {
            let t0 = hitting_time_bound(&cert);
            let worst = ens.regime_switch_times.iter().map(|s| s.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
            self.derived.insert("hitting_time_bound".into(), t0);
            let bound = t0 + 2.0 * cfg.dt;
            self.rows.push(Row::at_most("hitting_time", "max regime switch time", worst, (worst, worst), bound));
        }

        if spec.prefactor_pairs > 0 {
            self.prefactor_rows(&rate, &cfg)?;
        }
        Ok(())
    }

    /// Random start pairs with `|x − y| ∈ [η/C₆, 10]`: the chained bound must
    /// dominate every plug-in estimate at `t ∈ {1, 2, 5}`.
    fn prefactor_rows(&mut self, rate: &RateCertificate, base: &SimConfig) -> Result<()> {
        let model = &self.model;
        let d = model.dim();
        let stride = (1.0 / base.dt).round() as usize;
        let cfg = SimConfig { horizon: 5.0, n_paths: PREFACTOR_PATHS, record_stride: stride, ..base.clone() };
        let lo = if rate.eta > 0.0 { (rate.eta / model.sigma().cond()).min(10.0) } else { 0.1 };
        let mut rng = rng::stream(self.spec.seed, Purpose::Scenario, 0);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..self.spec.prefactor_pairs)
            .map(|_| {
                let s = lo + (10.0 - lo) * rng.random::<f64>();
                let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                let m: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let x = (0..d).map(|i| m[i] + 0.5 * s * u[i] / norm).collect();
                let y = (0..d).map(|i| m[i] - 0.5 * s * u[i] / norm).collect();
                (x, y)
            })
            .collect();
        let ps = self.spec.p.clone();
        let ratios = pairs
            .par_iter()
            .enumerate()
            .map(|(i, (x, y))| {
                let first = PREFACTOR_STREAMS + (2 * i * PREFACTOR_PATHS) as u64;
                let mx = simulate_marginal(model, &cfg, x, first)?;
                let my = simulate_marginal(model, &cfg, y, first + PREFACTOR_PATHS as u64)?;
                let mut out = Vec::new();
                for &t in &PREFACTOR_TIMES {
                    let k = mx.slice_index(t)?;
                    for &p in &ps {
                        let (e, _) = plug_in(&mx.x[k], &my.x[k], d, p, PREFACTOR_PATHS, 1, d == 1)?;
                        out.push(e / wp_bound(rate, model, p, t, x, y, None)?);
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        for (j, (t, p)) in PREFACTOR_TIMES.iter().flat_map(|&t| ps.iter().map(move |&p| (t, p))).enumerate() {
            let worst = ratios.iter().map(|r| r[j]).fold(0.0, f64::max);
            self.rows.push(
                Row::at_most("prefactor", "max plug-in / bound over start pairs", worst, (worst, worst), 1.0)
                    .at(t)
                    .with_p(p),
            );
        }
        Ok(())
    }

    fn uniform_dissipative(&mut self) -> Result<()> {
        let spec = self.spec;
        let Family::Linear { k } = *self.model.family() else {
            return Err(Error::HypothesisViolated("uniform_dissipative needs a linear drift".into()));
        };
        if !(k > 0.0) {
            return Err(Error::HypothesisViolated(format!("linear drift needs K > 0, got {k}")));
        }
        let cfg = self.config(Coupling::Synchronous)?;
        if cfg.coupling != Coupling::Synchronous {
            return Err(Error::Config("uniform_dissipative runs the synchronous coupling".into()));
        }
        let (x0, y0) = (spec.x0.as_slice(), spec.y0()?);
        let ens = simulate_ensemble(&self.model, &cfg, x0, y0)?;
        let dist0 = euclid(x0, y0);
        let tol = spec.tolerance.unwrap_or(1e-2);
        self.derived.insert("K".into(), k);
        for &t in &spec.times {
            let idx = ens.slice_index(t)?;
            for &p in &spec.p {
                let (m, _) = ens.coupling_cost(idx, p);
                let target = dist0 * (-k * t).exp();
                self.rows.push(
                    Row::within("uniform_contraction", "upper (coupling)", root(m, p), tol, target).at(t).with_p(p),
                );
            }
        }
        Ok(())
    }

    fn flat_potential(&mut self) -> Result<()> {
        let spec = self.spec;
        let Family::FlatPotential { delta } = *self.model.family() else {
            return Err(Error::HypothesisViolated("flat_potential needs the flat-potential family".into()));
        };
        if delta < 1.0 {
            // no contraction: κ turns non-negative at large separations
            for r in [1e2, 3e2, 1e3, 3e3, 1e4] {
                let kappa = self.model.kappa_analytic(r)?;
                let label = format!("kappa_analytic at r = {r}");
                self.rows.push(Row::at_least("kappa_nonnegative", &label, kappa, (kappa, kappa), -1e-9));
            }
            return Ok(());
        }
        let (x0, y0) = (spec.x0.as_slice(), spec.y0()?);
        let dist0 = euclid(x0, y0);
        let tol = spec.tolerance.unwrap_or(1e-2);

        let sync = simulate_ensemble(&self.model, &spec.sim.config(spec.seed, Coupling::Synchronous)?, x0, y0)?;
        let mut prev: Option<(f64, usize)> = None;
        for &t in &spec.times {
            let k = sync.slice_index(t)?;
            let (m, se) = sync.coupling_cost(k, 1.0);
            self.rows.push(
                Row::at_most("w1_nonexpansive", "upper (coupling)", m, (m - CI_Z * se, m + CI_Z * se), dist0 + tol)
                    .at(t)
                    .with_p(1.0),
            );
            if let Some((_, k0)) = prev {
                // paired increments of the per-path distance
                let inc: Vec<f64> = (0..sync.n_paths())
                    .map(|i| {
                        let at = |k: usize| {
                            euclid(
                                &sync.x[k][i * sync.dim..(i + 1) * sync.dim],
                                &sync.y[k][i * sync.dim..(i + 1) * sync.dim],
                            )
                        };
                        at(k) - at(k0)
                    })
                    .collect();
                let (mi, sdi) = mean_sd(&inc);
                let se = sdi / (inc.len() as f64).sqrt();
                self.rows.push(
                    Row::at_most("w1_monotone", "W1(t) − W1(previous t)", mi, (mi - CI_Z * se, mi + CI_Z * se), tol)
                        .at(t)
                        .with_p(1.0),
                );
            }
            prev = Some((t, k));
        }

        let cfg = self.config(Coupling::Reflection)?;
        let refl = simulate_ensemble(&self.model, &cfg, x0, y0)?;
        let mut diff = vec![0.0; x0.len()];
        for i in 0..diff.len() {
            diff[i] = x0[i] - y0[i];
        }
        let r0 = self.model.sigma().inv_norm(&diff);
        for &t in spec.times.iter().filter(|&&t| t > 0.0) {
            let tv = tv_upper_from_coupling(&refl, t)?;
            let bound = (2.0 / (std::f64::consts::PI * t)).sqrt() * r0;
            let ci = (tv.estimate - CI_Z * tv.se, tv.estimate + CI_Z * tv.se);
            self.rows.push(Row::at_most("tv_bound", "2 P(T > t)", tv.estimate, ci, bound).at(t));
        }
        Ok(())
    }

    fn superconvex(&mut self) -> Result<()> {
        let Family::Superconvex { alpha } = *self.model.family() else {
            return Err(Error::HypothesisViolated("superconvex needs the superconvex family".into()));
        };
        let theta = 2.0 * alpha - 1.0;
        let eta = self.spec.certificate.eta.unwrap_or(1.0);
        // largest c with κ(r) + c r^θ ≤ 0 on the grid, shaved against rounding
        let hi = (10.0 * eta).max(20.0);
        let mut fit = f64::INFINITY;
        for r in linspace(eta.max(1e-6), hi, 2000) {
            fit = fit.min(-self.model.kappa_analytic(r)? / r.powf(theta));
        }
        let fit = fit * (1.0 - 1e-9);
        if !(fit > 0.0 && fit.is_finite()) {
            return Err(Error::HypothesisViolated(format!("no positive c fits κ(r) ≤ −c r^θ, got {fit}")));
        }
        self.derived.insert("c_fit".into(), fit);
        let c = self.spec.certificate.c.unwrap_or(fit);
        self.contraction(Certificate::new(c, eta, theta)?)?;

        // κ(r)/r → 0: no uniform dissipativity near the diagonal
        let r_small = (1e-3 / c).powf(1.0 / (2.0 * alpha - 2.0)).min(1.0);
        for i in 0..5 {
            let r = r_small * 10f64.powi(-i);
            let ratio = self.model.kappa_analytic(r)? / r;
            let label = format!("kappa(r)/r at r = {r:.3e}");
            self.rows.push(Row::at_least("small_r_degeneracy", &label, ratio, (ratio, ratio), -1e-2));
        }
        Ok(())
    }

    fn tv_decay(&mut self) -> Result<()> {
        let spec = self.spec;
        let (x0, y0) = (spec.x0.as_slice(), spec.y0()?);
        let cfg = self.config(Coupling::Reflection)?;
        let ens = simulate_ensemble(&self.model, &cfg, x0, y0)?;
        let mut diff = vec![0.0; x0.len()];
        for i in 0..diff.len() {
            diff[i] = x0[i] - y0[i];
        }
        let r0 = self.model.sigma().inv_norm(&diff);
        let zero_drift = matches!(*self.model.family(), Family::Linear { k } if k == 0.0);
        // with κ ≤ 0 the separation is dominated by r₀ + 2W until it hits 0
        let nonpositive = zero_drift
            || DissipativityProfile::from_model(&self.model)
                .map(|p| linspace(1e-3, 50.0, 2000).iter().all(|&r| p.kappa(r) <= 1e-12))
                .unwrap_or(false);
        for &t in spec.times.iter().filter(|&&t| t > 0.0) {
            let tv = tv_upper_from_coupling(&ens, t)?;
            let (q, se) = (0.5 * tv.estimate, 0.5 * tv.se);
            if zero_drift {
                let exact = 2.0 * normal_cdf(r0 / (2.0 * t.sqrt())) - 1.0;
                self.rows.push(Row::within("coupling_time_law", "P(T > t)", q, CI_Z * se, exact).at(t));
            }
            if nonpositive {
                let bound = r0 / (2.0 * std::f64::consts::PI * t).sqrt();
                self.rows.push(
                    Row::at_most("coupling_time_bound", "P(T > t)", q, (q - CI_Z * se, q + CI_Z * se), bound).at(t),
                );
            } else {
                self.rows.push(Row::info("tv_upper", "2 P(T > t)", tv.estimate).at(t));
            }
        }
        Ok(())
    }

    fn invariant(&mut self) -> Result<()> {
        let spec = self.spec;
        let d = self.model.dim();
        let cert = match (spec.certificate.certificate()?, self.model.family()) {
            (Some(c), _) => c,
            (None, Family::Linear { k }) if *k > 0.0 => Certificate::linear(k / 2.0, 0.0)?,
            (None, _) => return Err(Error::MissingCertificate),
        };
        let rate = self.certified(cert)?;
        let dt = spec.sim.dt;
        let t_burn = spec.invariant.t_burn.unwrap_or(10.0 / rate.lambda);
        let steps = (t_burn / dt).round();
        if !(steps >= 1.0) {
            return Err(Error::Config(format!("burn-in {t_burn} is shorter than dt")));
        }
        self.derived.insert("t_burn".into(), steps * dt);
        let burn_cfg = SimConfig::new(dt, 2.0 * steps * dt, spec.sim.n_paths, spec.seed, Coupling::Synchronous)
            .with_stride(steps as usize);
        let start = spec.invariant.start.clone().unwrap_or_else(|| vec![0.0; d]);
        if start.len() != d {
            return Err(Error::Config("invariant.start does not match the model dimension".into()));
        }
        let burn = simulate_marginal(&self.model, &burn_cfg, &start, 0)?;
        let (mu, mu2) = (&burn.x[1], &burn.x[2]);

        let first: Vec<f64> = mu.chunks(d).map(|r| r[0]).collect();
        if let (Family::Linear { k }, Some(s)) = (self.model.family(), self.model.sigma().as_scalar()) {
            let (var, se) = variance_se(&first);
            let target = s * s / (2.0 * k);
            self.rows.push(Row::within(
                "stationary_variance",
                "sample variance (first coordinate)",
                var,
                4.0 * se,
                target,
            ));
        }
        if self.model.family().is_odd() {
            let (m, sd) = mean_sd(&first);
            let se = sd / (first.len() as f64).sqrt();
            self.rows.push(Row::within("stationary_mean", "sample mean (first coordinate)", m, 4.0 * se, 0.0));
        }

        let n_assign = spec.transport.n_assignment;
        let w1 = |a: &[f64], b: &[f64]| -> f64 {
            let res = if d == 1 {
                wasserstein_exact_1d(&m1(a, d), &m1(b, d), 1.0)
            } else {
                let n = n_assign.min(a.len() / d);
                wasserstein_exact_assignment(&m1(&a[..n * d], d), &m1(&b[..n * d], d), &Ground::Lp(1.0)).map(|r| r.0)
            };
            res.unwrap_or(f64::NAN)
        };
        let drift = w1(mu, mu2);
        let floor = permutation_floor(mu, mu2, d, spec.invariant.splits, spec.seed, w1);
        let (fm, fsd) = mean_sd(&floor);
        let threshold = fm + 4.0 * fsd;
        self.derived.insert("noise_floor_mean".into(), fm);
        self.derived.insert("noise_floor_sd".into(), fsd);
        if !(drift <= threshold) {
            return Err(Error::StationarityNotReached { statistic: drift, threshold });
        }
        self.rows.push(Row::at_most("stationarity_drift", "W1(mu_T, mu_2T)", drift, (drift, drift), threshold));

        let cfg = self.config(Coupling::Synchronous)?;
        let x0 = spec.x0.as_slice();
        let nu = simulate_marginal(&self.model, &cfg, x0, spec.sim.n_paths as u64)?;
        let cond = self.model.sigma().cond();
        let theta = cert.theta;
        for &p in &spec.p {
            let pref = rate.prefactor(cond, p)?.value;
            let n = n_assign.min(mu.len() / d);
            let point = m1(&x0.repeat(n), d);
            let phi = wasserstein_gauge(&point, &m1(&mu[..n * d], d), move |r| crate::lyapunov::phi_p(p, r))?;
            self.rows.push(Row::info("phi_p_distance", "W_phi_p(nu, mu_hat)", phi).with_p(p));
            for &t in &spec.times {
                let k = nu.slice_index(t)?;
                let (batch, batches) = if d == 1 {
                    (mu.len() / spec.transport.batches, spec.transport.batches)
                } else {
                    (n_assign, spec.transport.batches)
                };
                let (e, se) = plug_in(&nu.x[k], mu, d, p, batch, batches, d == 1)?;
                // pointwise bound integrated against μ̂ in L^p
                let moment = mu.chunks(d).map(|y| gauge(p, euclid(x0, y), t, theta).powf(p)).sum::<f64>()
                    / (mu.len() / d) as f64;
                let bound = pref * (-rate.lambda * t / p).exp() * moment.powf(1.0 / p);
                let ci = ((e - CI_Z * se).max(0.0), e + CI_Z * se);
                self.rows.push(Row::at_most("invariant_decay", "plug-in (empirical OT)", e, ci, bound).at(t).with_p(p));
            }
        }
        Ok(())
    }
}

fn m1(points: &[f64], d: usize) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(d, points.to_vec()).expect("finite simulated points")
}
