//! Drift models and their dissipativity profiles.
//!
//! For a model `dX = σ dB + b(X) dt` the profile is
//!
//! ```text
//! κ(r) = sup { ⟨σ⁻¹(x−y), σ⁻¹(b(x)−b(y))⟩ / (2|σ⁻¹(x−y)|) : |σ⁻¹(x−y)| = r }
//! ```
//!
//! Catalog families have closed forms (or a one-dimensional reduction) when σ
//! is a multiple of the identity; arbitrary drifts are handled by a sampled
//! estimator that only ever produces a lower bound of the supremum.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad;
use crate::rng::{self, Purpose};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorFieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Constant, non-degenerate diffusion matrix with its cached inverse.
#[derive(Debug, Clone)]
pub struct Sigma {
    dim: usize,
    matrix: Vec<f64>,
    inverse: Vec<f64>,
    scalar: Option<f64>,
    op_norm: f64,
    inv_op_norm: f64,
}

impl Sigma {
    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0).expect("identity is non-degenerate")
    }

    pub fn scalar(dim: usize, s: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !s.is_finite() || s == 0.0 {
            return Err(Error::DegenerateSigma(format!("scalar diffusion {s}")));
        }
        let mut matrix = vec![0.0; dim * dim];
        let mut inverse = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = s;
            inverse[i * dim + i] = 1.0 / s;
        }
        Ok(Self { dim, matrix, inverse, scalar: Some(s), op_norm: s.abs(), inv_op_norm: 1.0 / s.abs() })
    }

    /// Build from a row-major `dim × dim` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("sigma must be a non-empty square matrix"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateSigma("non-finite entry".into()));
        }
        let s = flat[0];
        let is_scalar = (0..dim).all(|i| (0..dim).all(|j| flat[i * dim + j] == if i == j { s } else { 0.0 }));
        if is_scalar {
            return Self::scalar(dim, s);
        }
        let m = DMatrix::from_row_slice(dim, dim, &flat);
        let sv = m.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        if smin <= 1e-12 * smax.max(f64::MIN_POSITIVE) {
            return Err(Error::DegenerateSigma(format!("smallest singular value {smin:e}")));
        }
        let inv = m.try_inverse().ok_or_else(|| Error::DegenerateSigma("matrix is not invertible".into()))?;
        let mut inverse = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                inverse[i * dim + j] = inv[(i, j)];
            }
        }
        Ok(Self { dim, matrix: flat, inverse, scalar: None, op_norm: smax, inv_op_norm: 1.0 / smin })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_scalar(&self) -> Option<f64> {
        self.scalar
    }

    /// Row-major entries.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// `C₆ = max(‖σ‖, ‖σ⁻¹‖)`, so that `|z|/C₆ ≤ |σ⁻¹z| ≤ C₆|z|`.
    pub fn cond(&self) -> f64 {
        self.op_norm.max(self.inv_op_norm)
    }

    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }

    pub fn inv_op_norm(&self) -> f64 {
        self.inv_op_norm
    }

    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        mat_vec(self.scalar, &self.matrix, self.dim, z, out);
    }

    pub fn apply_inverse(&self, z: &[f64], out: &mut [f64]) {
        mat_vec(self.scalar.map(|s| 1.0 / s), &self.inverse, self.dim, z, out);
    }

    pub fn inv_norm(&self, z: &[f64]) -> f64 {
        match self.scalar {
            Some(s) => norm(z) / s.abs(),
            None => {
                let mut w = vec![0.0; self.dim];
                self.apply_inverse(z, &mut w);
                norm(&w)
            }
        }
    }
}

fn mat_vec(scalar: Option<f64>, m: &[f64], dim: usize, z: &[f64], out: &mut [f64]) {
    match scalar {
        Some(1.0) => out.copy_from_slice(z),
        Some(s) => out.iter_mut().zip(z).for_each(|(o, v)| *o = s * v),
        None => {
            for (i, o) in out.iter_mut().enumerate() {
                *o = m[i * dim..(i + 1) * dim].iter().zip(z).map(|(a, b)| a * b).sum();
            }
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Drift family.
#[derive(Clone)]
pub enum Family {
    /// `b(x) = −K x`.
    Linear {
        k: f64,
    },
    /// Gradient of `V(x) = −(1+|x|²)^{δ/2}`, `δ ∈ (0, 2)`.
    FlatPotential {
        delta: f64,
    },
    /// Gradient of `V(x) = −|x|^{2α}`, `α > 1`.
    Superconvex {
        alpha: f64,
    },
    /// `b(x) = x − |x|² x`.
    DoubleWell,
    /// One-dimensional drift whose increments satisfy
    /// `(b(x)−b(y))(x−y) ≤ K₁|x−y|²` for `|x−y| ≤ L` and `≤ −K₂|x−y|²` beyond.
    Piecewise {
        k1: f64,
        k2: f64,
        l: f64,
    },
    Custom(VectorFieldFn),
}

impl fmt::Debug for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { k } => write!(f, "Linear {{ k: {k} }}"),
            Self::FlatPotential { delta } => write!(f, "FlatPotential {{ delta: {delta} }}"),
            Self::Superconvex { alpha } => write!(f, "Superconvex {{ alpha: {alpha} }}"),
            Self::DoubleWell => write!(f, "DoubleWell"),
            Self::Piecewise { k1, k2, l } => write!(f, "Piecewise {{ k1: {k1}, k2: {k2}, l: {l} }}"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear { .. } => "linear",
            Self::FlatPotential { .. } => "flat_potential",
            Self::Superconvex { .. } => "superconvex",
            Self::DoubleWell => "double_well",
            Self::Piecewise { .. } => "piecewise",
            Self::Custom(_) => "custom",
        }
    }

    /// Whether `b(−x) = −b(x)`.
    pub fn is_odd(&self) -> bool {
        matches!(self, Self::Linear { .. } | Self::FlatPotential { .. } | Self::Superconvex { .. } | Self::DoubleWell)
    }
}

#[derive(Debug, Clone)]
pub struct DriftModel {
    dim: usize,
    family: Family,
    sigma: Sigma,
}

impl DriftModel {
    pub fn new(dim: usize, family: Family, sigma: Sigma) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if sigma.dim() != dim {
            return Err(invalid(format!("sigma is {0}x{0} but dimension is {dim}", sigma.dim())));
        }
        match family {
            Family::Linear { k } if !k.is_finite() => return Err(invalid("K must be finite")),
            Family::FlatPotential { delta } if !(delta > 0.0 && delta < 2.0) => {
                return Err(invalid(format!("flat_potential needs δ in (0,2), got {delta}")))
            }
            Family::Superconvex { alpha } if !(alpha > 1.0 && alpha.is_finite()) => {
                return Err(invalid(format!("superconvex needs α > 1, got {alpha}")))
            }
            Family::Piecewise { k1, k2, l } => {
                if !(k1 > 0.0 && k2 > 0.0 && l > 0.0) {
                    return Err(invalid("piecewise needs K1, K2, L > 0"));
                }
                if dim != 1 {
                    return Err(Error::Unsupported("piecewise family is one-dimensional".into()));
                }
            }
            _ => {}
        }
        Ok(Self { dim, family, sigma })
    }

    /// Convenience constructor with `σ = Id`.
    pub fn with_identity(dim: usize, family: Family) -> Result<Self> {
        Self::new(dim, family, Sigma::identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn sigma(&self) -> &Sigma {
        &self.sigma
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::Linear { k } => out.iter_mut().zip(x).for_each(|(o, v)| *o = -k * v),
            Family::FlatPotential { delta } => {
                let s2: f64 = x.iter().map(|v| v * v).sum();
                let g = -delta * (1.0 + s2).powf(0.5 * delta - 1.0);
                out.iter_mut().zip(x).for_each(|(o, v)| *o = g * v);
            }
            Family::Superconvex { alpha } => {
                let s2: f64 = x.iter().map(|v| v * v).sum();
                let g = if s2 == 0.0 { 0.0 } else { -2.0 * alpha * s2.powf(alpha - 1.0) };
                out.iter_mut().zip(x).for_each(|(o, v)| *o = g * v);
            }
            Family::DoubleWell => {
                let s2: f64 = x.iter().map(|v| v * v).sum();
                out.iter_mut().zip(x).for_each(|(o, v)| *o = v - s2 * v);
            }
            Family::Piecewise { k1, k2, l } => {
                out[0] = piecewise_drift(*k1, *k2, *l, x[0]);
            }
            Family::Custom(f) => f(x, out),
        }
    }

    /// `b(x) − b(y)`, written without cancellation for the radial families so
    /// that the increment stays accurate for nearby points far from the origin.
    pub fn drift_increment(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let radial = |g: &dyn Fn(f64) -> f64, dg: &dyn Fn(f64, f64) -> f64, out: &mut [f64]| {
            let sy: f64 = y.iter().map(|v| v * v).sum();
            // |x|² − |y|² = ⟨x + y, x − y⟩
            let ds: f64 = x.iter().zip(y).map(|(a, b)| (a + b) * (a - b)).sum();
            let gx = g(sy + ds);
            let dgv = dg(sy, ds);
            for i in 0..x.len() {
                out[i] = gx * (x[i] - y[i]) + dgv * y[i];
            }
        };
        match &self.family {
            Family::Linear { k } => {
                for i in 0..x.len() {
                    out[i] = -k * (x[i] - y[i]);
                }
            }
            Family::FlatPotential { delta } => {
                let e = 0.5 * delta - 1.0;
                let g = |s: f64| -delta * (1.0 + s).powf(e);
                let dg = |sy: f64, ds: f64| g(sy) * (e * (ds / (1.0 + sy)).ln_1p()).exp_m1();
                radial(&g, &dg, out);
            }
            Family::Superconvex { alpha } => {
                let e = alpha - 1.0;
                let g = |s: f64| if s <= 0.0 { 0.0 } else { -2.0 * alpha * s.powf(e) };
                let dg = |sy: f64, ds: f64| {
                    if sy > 0.0 {
                        g(sy) * (e * (ds / sy).ln_1p()).exp_m1()
                    } else {
                        g(sy + ds)
                    }
                };
                radial(&g, &dg, out);
            }
            Family::DoubleWell => {
                let g = |s: f64| 1.0 - s;
                let dg = |_: f64, ds: f64| -ds;
                radial(&g, &dg, out);
            }
            Family::Piecewise { .. } | Family::Custom(_) => {
                let mut by = vec![0.0; y.len()];
                self.drift_into(x, out);
                self.drift_into(y, &mut by);
                out.iter_mut().zip(&by).for_each(|(o, b)| *o -= b);
            }
        }
    }

    fn has_exact_increment(&self) -> bool {
        !matches!(self.family, Family::Piecewise { .. } | Family::Custom(_))
    }

    pub fn eval_drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(x, &mut out);
        out
    }

    /// Closed-form κ for catalog families under `σ = s·Id`.
    ///
    /// For `flat_potential` with `δ < 1` this is the supremum over pairs on a
    /// line through the origin, found by a one-dimensional search. For
    /// `piecewise` it is the profile of the increment condition, which bounds
    /// the representative drift's κ from above.
    pub fn kappa_analytic(&self, r: f64) -> Result<f64> {
        let s = self.sigma.as_scalar().ok_or_else(|| Error::Unsupported("analytic κ needs σ = s·Id".into()))?.abs();
        let rho = s * r;
        let k = match &self.family {
            Family::Linear { k } => -k * rho / 2.0,
            Family::DoubleWell => rho / 2.0 * (1.0 - rho * rho / 4.0),
            Family::Superconvex { alpha } => -alpha * 2f64.powf(2.0 - 2.0 * alpha) * rho.powf(2.0 * alpha - 1.0),
            Family::Piecewise { k1, k2, l } => {
                if rho <= *l {
                    k1 * rho / 2.0
                } else {
                    -k2 * rho / 2.0
                }
            }
            Family::FlatPotential { delta } => {
                if *delta >= 1.0 {
                    0.0
                } else {
                    flat_collinear_sup(*delta, rho)
                }
            }
            Family::Custom(_) => return Err(Error::Unsupported("custom drift has no analytic κ".into())),
        };
        Ok(k / s)
    }

    /// Monte Carlo lower bound of κ(r): the maximum of the normalized
    /// increment over `n_samples` random pairs at σ-distance `r`.
    ///
    /// Pairs whose realized separation is off by more than 0.1% (centers too
    /// far out for the float grid), or whose drift difference is swamped by
    /// rounding, are skipped; kept values are rescaled to the nominal `r`.
    ///
    /// Sample `i` is fully determined by `(rng_seed, i)`, so the estimate is
    /// non-decreasing in `n_samples` and independent of the worker count.
    pub fn kappa_sampled(&self, r: f64, n_samples: usize, rng_seed: u64) -> Result<f64> {
        self.kappa_sampled_with(r, n_samples, rng_seed, &SamplerOptions::default())
    }

    pub fn kappa_sampled_with(&self, r: f64, n_samples: usize, rng_seed: u64, opts: &SamplerOptions) -> Result<f64> {
        if n_samples == 0 {
            return Err(invalid("n_samples must be at least 1"));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(invalid(format!("r must be positive, got {r}")));
        }
        const CHUNK: usize = 1024;
        let chunks = n_samples.div_ceil(CHUNK);
        let best = (0..chunks)
            .into_par_iter()
            .map(|ci| {
                let mut rng = rng::stream(rng_seed, Purpose::KappaSampler, ci as u64);
                let count = CHUNK.min(n_samples - ci * CHUNK);
                let mut buf = SamplerBuffers::new(self.dim);
                let mut best = f64::NEG_INFINITY;
                for j in 0..count {
                    let v = self.sample_pair(r, (ci * CHUNK + j) % 2 == 1, opts, &mut rng, &mut buf);
                    if v.is_finite() && v > best {
                        best = v;
                    }
                }
                best
            })
            .reduce(|| f64::NEG_INFINITY, f64::max);
        Ok(best)
    }

    fn sample_pair(
        &self,
        r: f64,
        heavy: bool,
        opts: &SamplerOptions,
        rng: &mut rng::StreamRng,
        buf: &mut SamplerBuffers,
    ) -> f64 {
        let d = self.dim;
        // direction uniform on the sphere in σ⁻¹ coordinates
        loop {
            for u in buf.u.iter_mut() {
                *u = rng.sample(StandardNormal);
            }
            let n = norm(&buf.u);
            if n > 1e-12 {
                buf.u.iter_mut().for_each(|u| *u *= r / n);
                break;
            }
        }
        self.sigma.apply(&buf.u, &mut buf.z);
        let scale = if heavy {
            opts.center_scale * 10f64.powf(rng.random::<f64>() * opts.tail_decades)
        } else {
            opts.center_scale
        };
        for i in 0..d {
            let c: f64 = scale * rng.sample::<f64, _>(StandardNormal);
            buf.x[i] = c + 0.5 * buf.z[i];
            buf.y[i] = c - 0.5 * buf.z[i];
        }
        // rounding in a plain b(x) − b(y) shifts the quotient by about half this much
        let rounding = if self.has_exact_increment() {
            0.0
        } else {
            self.drift_into(&buf.x, &mut buf.bx);
            self.drift_into(&buf.y, &mut buf.by);
            4.0 * f64::EPSILON * self.sigma.inv_op_norm() * (norm(&buf.bx) + norm(&buf.by))
        };
        self.drift_increment(&buf.x, &buf.y, &mut buf.bx);
        for i in 0..d {
            buf.z[i] = buf.x[i] - buf.y[i];
        }
        self.sigma.apply_inverse(&buf.z, &mut buf.u);
        self.sigma.apply_inverse(&buf.bx, &mut buf.by);
        let ww = dot(&buf.u, &buf.u);
        // far from the origin the float grid cannot hold the exact separation
        if ww == 0.0 || (ww.sqrt() / r - 1.0).abs() > 1e-3 {
            return f64::NAN;
        }
        // the realized separation differs from r by rounding; rescale to r
        let q = dot(&buf.u, &buf.by) / (2.0 * ww) * r;
        if rounding > 1e-13 * (1.0 + q.abs()) {
            return f64::NAN;
        }
        q
    }
}

/// Pair-center distribution of the sampled κ estimator: half the samples use
/// a Gaussian center with standard deviation `center_scale`, the other half
/// multiply that scale by `10^U`, `U ~ Uniform(0, tail_decades)`, to reach
/// configurations far from the origin.
#[derive(Debug, Clone)]
pub struct SamplerOptions {
    pub center_scale: f64,
    pub tail_decades: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self { center_scale: 10.0, tail_decades: 12.0 }
    }
}

struct SamplerBuffers {
    u: Vec<f64>,
    z: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    bx: Vec<f64>,
    by: Vec<f64>,
}

impl SamplerBuffers {
    fn new(d: usize) -> Self {
        Self { u: vec![0.0; d], z: vec![0.0; d], x: vec![0.0; d], y: vec![0.0; d], bx: vec![0.0; d], by: vec![0.0; d] }
    }
}

/// Sawtooth representative of the piecewise increment condition.
///
/// `f(s) = −K₂ s + m·tri(s) − (m/4)s` with `m = 4(K₁+K₂)/3` and a unit-slope
/// triangle wave of period `L/2`: chord slopes never exceed `K₁`, and over any
/// chord longer than `L` the wave gains at most `mL/4`, which the `−(m/4)s`
/// term absorbs.
fn piecewise_drift(k1: f64, k2: f64, l: f64, s: f64) -> f64 {
    let m = 4.0 * (k1 + k2) / 3.0;
    let period = 0.5 * l;
    let u = s.rem_euclid(period);
    let tri = if u < 0.5 * period { u } else { period - u };
    -k2 * s + m * tri - 0.25 * m * s
}

fn flat_b1(delta: f64, s: f64) -> f64 {
    -delta * s * (1.0 + s * s).powf(0.5 * delta - 1.0)
}

/// `sup_y (b(y+ρ) − b(y))/2` for the one-dimensional flat potential.
///
/// The increment is symmetric about `y = −ρ/2`, so the search runs over the
/// offset `t ≥ 0` of the pair midpoint. The value tends to 0 as `t → ∞`.
fn flat_collinear_sup(delta: f64, rho: f64) -> f64 {
    let f = |t: f64| 0.5 * (flat_b1(delta, t + 0.5 * rho) - flat_b1(delta, t - 0.5 * rho));
    let n = 4000;
    let lo = 1e-4 * (1.0 + rho);
    let hi = 1e8 * (1.0 + rho);
    let mut ts = Vec::with_capacity(n + 1);
    ts.push(0.0);
    for i in 0..n {
        ts.push(lo * (hi / lo).powf(i as f64 / (n - 1) as f64));
    }
    let (imax, _) = ts.iter().enumerate().map(|(i, &t)| (i, f(t))).fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
        if v > acc.1 {
            (i, v)
        } else {
            acc
        }
    });
    let a = if imax == 0 { 0.0 } else { ts[imax - 1] };
    let b = ts[(imax + 1).min(n)];
    let best = golden_max(&f, a, b, 200).max(f(ts[imax]));
    best.max(0.0)
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    fc.max(fd)
}

/// Certificate asserting `κ(r) ≤ −c r^θ` for all `r ≥ η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub c: f64,
    pub eta: f64,
    pub theta: f64,
}

impl Certificate {
    pub fn new(c: f64, eta: f64, theta: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("certificate c must be positive, got {c}")));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(invalid(format!("certificate η must be non-negative, got {eta}")));
        }
        if !(theta >= 1.0 && theta.is_finite()) {
            return Err(invalid(format!("certificate θ must be at least 1, got {theta}")));
        }
        Ok(Self { c, eta, theta })
    }

    pub fn linear(c: f64, eta: f64) -> Result<Self> {
        Self::new(c, eta, 1.0)
    }

    pub fn is_linear(&self) -> bool {
        self.theta == 1.0
    }

    /// Equivalent linear certificate: `κ(r) ≤ −cη^{θ−1} r` for `r ≥ η`.
    pub fn linearized(&self) -> Result<Self> {
        if self.is_linear() {
            return Ok(*self);
        }
        if self.eta <= 0.0 {
            return Err(invalid("rescaling a θ > 1 certificate needs η > 0"));
        }
        Self::linear(self.c * self.eta.powf(self.theta - 1.0), self.eta)
    }

    fn bound(&self, r: f64) -> f64 {
        if self.is_linear() {
            self.c * r
        } else {
            self.c * r.powf(self.theta)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainingBound {
    pub slope: f64,
    pub threshold: f64,
    pub delta0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateMargin {
    pub r: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub margins: Vec<CertificateMargin>,
    pub max_margin: f64,
    pub pass: bool,
}

/// κ as a function of the σ-distance, plus an optional certificate.
#[derive(Clone)]
pub struct DissipativityProfile {
    kappa: ScalarFn,
    certificate: Option<Certificate>,
    local_sup: Option<f64>,
    critical_points: Vec<f64>,
    kinks: Vec<f64>,
    label: String,
}

impl fmt::Debug for DissipativityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DissipativityProfile")
            .field("label", &self.label)
            .field("certificate", &self.certificate)
            .field("local_sup", &self.local_sup)
            .finish()
    }
}

impl DissipativityProfile {
    pub fn from_fn(label: impl Into<String>, kappa: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kappa: Arc::new(kappa),
            certificate: None,
            local_sup: None,
            critical_points: Vec::new(),
            kinks: Vec::new(),
            label: label.into(),
        }
    }

    /// Analytic profile of a catalog model.
    pub fn from_model(model: &DriftModel) -> Result<Self> {
        model.kappa_analytic(1.0)?;
        let scale = model.sigma().as_scalar().map(f64::abs).unwrap_or(1.0);
        let critical_points = match model.family() {
            // κ′(ρ) = 0 at ρ = 2/√3
            Family::DoubleWell => vec![2.0 / 3f64.sqrt() / scale],
            _ => Vec::new(),
        };
        let m = model.clone();
        let mut p =
            Self::from_fn(model.family().name(), move |r| m.kappa_analytic(r).expect("validated analytic family"));
        p.critical_points = critical_points;
        Ok(p)
    }

    /// Piecewise-linear interpolation of tabulated values; linear
    /// extrapolation beyond either end.
    pub fn from_table(label: impl Into<String>, r: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        if r.len() < 2 || r.len() != kappa.len() {
            return Err(invalid("κ table needs at least two matching rows"));
        }
        if r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("κ table abscissae must be strictly increasing"));
        }
        let kinks = r.clone();
        let f = move |x: f64| {
            let i = match r.partition_point(|&v| v <= x) {
                0 => 0,
                n if n >= r.len() => r.len() - 2,
                n => n - 1,
            };
            let t = (x - r[i]) / (r[i + 1] - r[i]);
            kappa[i] + t * (kappa[i + 1] - kappa[i])
        };
        let mut p = Self::from_fn(label, f);
        p.kinks = kinks;
        Ok(p)
    }

    /// Tabulate `kappa_sampled` on `grid` (arbitrary drifts).
    pub fn sampled(model: &DriftModel, grid: &[f64], n_samples: usize, seed: u64) -> Result<Self> {
        let vals = grid.iter().map(|&r| model.kappa_sampled(r, n_samples, seed)).collect::<Result<Vec<_>>>()?;
        Self::from_table(format!("{}(sampled)", model.family().name()), grid.to_vec(), vals)
    }

    pub fn with_certificate(mut self, cert: Certificate) -> Self {
        self.certificate = Some(cert);
        self
    }

    pub fn set_certificate(&mut self, cert: Certificate) {
        self.certificate = Some(cert);
    }

    pub fn certificate(&self) -> Option<Certificate> {
        self.certificate
    }

    pub fn local_sup(&self) -> Option<f64> {
        self.local_sup
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Points where κ may fail to be smooth (table nodes).
    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn kappa(&self, r: f64) -> f64 {
        (self.kappa)(r)
    }

    pub fn kappa_plus(&self, r: f64) -> f64 {
        self.kappa(r).max(0.0)
    }

    pub fn kappa_fn(&self) -> ScalarFn {
        self.kappa.clone()
    }

    /// Points in `(a, b)` where κ changes sign, i.e. where κ⁺ has a kink.
    pub fn zero_crossings(&self, a: f64, b: f64) -> Vec<f64> {
        if b <= a {
            return Vec::new();
        }
        let n = 4096;
        let mut out = Vec::new();
        let mut x0 = a + (b - a) * 1e-9;
        let mut f0 = self.kappa(x0);
        for i in 1..=n {
            let x1 = a + (b - a) * i as f64 / n as f64;
            let f1 = self.kappa(x1);
            if f0.is_finite() && f1.is_finite() && (f0 > 0.0) != (f1 > 0.0) && x1 < b {
                let (mut lo, mut hi) = (x0, x1);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if (self.kappa(mid) > 0.0) == (f0 > 0.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                out.push(0.5 * (lo + hi));
            }
            x0 = x1;
            f0 = f1;
        }
        out
    }

    /// `∫_0^s κ⁺(r) dr`, split at the sign changes of κ.
    pub fn kappa_plus_integral(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let breaks = self.zero_crossings(0.0, s);
        let f = |r: f64| self.kappa_plus(r);
        quad::integrate_split(&f, 0.0, s, &breaks, 1e-13)
    }

    /// Upgrade a pointwise bound `κ(r₀) ≤ −c` to the linear certificate
    /// `κ(r) ≤ −(c/(2r₀)) r` for `r ≥ r₀(δ₀ + 2c)/c`, where `δ₀` bounds κ on
    /// `[0, r₀]`. The derived certificate is stored in the profile.
    pub fn chaining_bound(&mut self, r0: f64, c: f64) -> Result<ChainingBound> {
        if !(r0 > 0.0 && c > 0.0) {
            return Err(invalid("chaining needs r0 > 0 and c > 0"));
        }
        let k0 = self.kappa(r0);
        if !(k0 <= -c) {
            return Err(Error::HypothesisViolated(format!("κ({r0}) = {k0} exceeds −c = {}", -c)));
        }
        let n = 10_000;
        let mut sup = f64::NEG_INFINITY;
        let at_zero = self.kappa(0.0);
        if at_zero.is_finite() {
            sup = at_zero;
        }
        let candidates = (1..=n)
            .map(|i| r0 * i as f64 / n as f64)
            .chain(self.critical_points.iter().copied().filter(|&p| p > 0.0 && p <= r0));
        for r in candidates {
            let v = self.kappa(r);
            if !v.is_finite() {
                return Err(Error::HypothesisViolated(format!("κ is unbounded near r = {r}")));
            }
            sup = sup.max(v);
        }
        let delta0 = sup + 0.01 * sup.abs();
        let slope = c / (2.0 * r0);
        let threshold = r0 * (delta0 + 2.0 * c) / c;
        self.local_sup = Some(delta0);
        self.certificate = Some(Certificate::linear(slope, threshold.max(0.0))?);
        Ok(ChainingBound { slope, threshold, delta0 })
    }

    /// Margins `κ(r) + c r^θ` on `grid`; passes when every margin is `≤ 0`.
    pub fn check_certificate(&self, grid: &[f64]) -> Result<CertificateReport> {
        let cert = self.certificate.ok_or(Error::MissingCertificate)?;
        if let Some(&r) = grid.iter().find(|&&r| r < cert.eta) {
            return Err(invalid(format!("grid point {r} lies below η = {}", cert.eta)));
        }
        let margins: Vec<CertificateMargin> =
            grid.iter().map(|&r| CertificateMargin { r, margin: self.kappa(r) + cert.bound(r) }).collect();
        let max_margin = margins.iter().map(|m| m.margin).fold(f64::NEG_INFINITY, f64::max);
        let pass = margins.iter().all(|m| m.margin <= 0.0);
        Ok(CertificateReport { margins, max_margin, pass })
    }

    /// CSV rows `r,kappa,kappa_plus`.
    pub fn write_csv<W: Write>(&self, grid: &[f64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "kappa", "kappa_plus"])?;
        for &r in grid {
            let k = self.kappa(r);
            w.write_record([r.to_string(), k.to_string(), k.max(0.0).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` points evenly spaced on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}
