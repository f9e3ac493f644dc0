//! Auxiliary Lyapunov function ψ and the explicit rate constants.
//!
//! With `κ* = κ⁺` on `(0, η]` and `κ*(r) = −cr` beyond, `I(s) = ∫_0^s κ*` and
//! `J(s) = ∫_s^∞ exp(I(u) + εu²/2) du`,
//!
//! ```text
//! ψ′(s) = e^{−I(s)} J(s),     ψ″ = −κ* ψ′ − e^{εr²/2}.
//! ```
//!
//! Past η the inner integral is Gaussian, so `ψ′(s) = e^{εs²/2} ∫_s^∞ e^{−(c−ε)u²/2} du`
//! (scaled erfc); only `[0, η]` needs quadrature.

use std::io::Write;

use serde::Serialize;

use crate::drift::{Certificate, DissipativityProfile, DriftModel, ScalarFn};
use crate::error::{invalid, Error, Result};
use crate::quad::{integrate_adaptive, integrate_panel};
use crate::special::gaussian_tail_scaled;

pub const DEFAULT_GRID_SIZE: usize = 4096;

/// Smallest positive grid point.
const GRID_START: f64 = 1e-6;

/// Largest exponent `εr²/2` the tables may carry.
const MAX_EXPONENT: f64 = 700.0;

/// Tabulated ψ, ψ′, ψ″ with an exact evaluator behind the tables.
#[derive(Clone)]
pub struct AuxiliaryFunction {
    eps: f64,
    eta: f64,
    c: f64,
    kappa: ScalarFn,
    grid: Vec<f64>,
    psi: Vec<f64>,
    psi_prime: Vec<f64>,
    psi_double_prime: Vec<f64>,
    knots: Vec<f64>,
    // I and J at grid points ≤ η
    i_tab: Vec<f64>,
    j_tab: Vec<f64>,
}

impl std::fmt::Debug for AuxiliaryFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuxiliaryFunction")
            .field("eps", &self.eps)
            .field("eta", &self.eta)
            .field("c", &self.c)
            .field("grid_len", &self.grid.len())
            .field("r_max", &self.r_max())
            .finish()
    }
}

/// Build ψ from a profile carrying a linear certificate `(c, η, θ = 1)`.
///
/// `r_max` is raised to at least `max(12/√ε, 4η)`.
pub fn build_psi(profile: &DissipativityProfile, eps: f64, r_max: f64, grid_size: usize) -> Result<AuxiliaryFunction> {
    let cert = profile.certificate().ok_or(Error::MissingCertificate)?;
    if !cert.is_linear() {
        return Err(invalid(format!("θ = {} certificate: linearize it first (c → cη^(θ−1))", cert.theta)));
    }
    AuxiliaryFunction::new(profile, cert.c, cert.eta, eps, r_max, grid_size)
}

impl AuxiliaryFunction {
    fn new(profile: &DissipativityProfile, c: f64, eta: f64, eps: f64, r_max: f64, grid_size: usize) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("c must be positive, got {c}")));
        }
        if !(eps > 0.0 && eps < c) {
            return Err(invalid(format!("ε must lie in (0, c) = (0, {c}), got {eps}")));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(invalid(format!("η must be non-negative, got {eta}")));
        }
        let r_max = (12.0 / eps.sqrt()).max(4.0 * eta).max(if r_max.is_finite() { r_max } else { 0.0 });
        if 0.5 * eps * r_max * r_max > MAX_EXPONENT {
            return Err(invalid(format!("r_max = {r_max} overflows e^(εr²/2) for ε = {eps}")));
        }
        let grid_size = grid_size.max(64);

        let mut knots = Vec::new();
        if eta > 0.0 {
            knots.push(eta);
            knots.extend(profile.zero_crossings(0.0, eta));
            knots.extend(profile.kinks().iter().copied().filter(|&k| k > 0.0 && k < eta));
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let grid = make_grid(r_max, grid_size, &knots);

        let mut aux = Self {
            eps,
            eta,
            c,
            kappa: profile.kappa_fn(),
            grid,
            psi: Vec::new(),
            psi_prime: Vec::new(),
            psi_double_prime: Vec::new(),
            knots,
            i_tab: Vec::new(),
            j_tab: Vec::new(),
        };
        aux.tabulate()?;
        Ok(aux)
    }

    fn tabulate(&mut self) -> Result<()> {
        let n_inner = if self.eta > 0.0 { self.grid.partition_point(|&r| r <= self.eta) } else { 0 };
        if n_inner > 0 {
            let mut i_tab = vec![0.0; n_inner];
            for i in 0..n_inner - 1 {
                let (a, b) = (self.grid[i], self.grid[i + 1]);
                i_tab[i + 1] = i_tab[i] + panel(&|r: f64| self.kappa_plus(r), a, b, i == 0);
            }
            self.i_tab = i_tab;
            let i_eta = self.i_tab[n_inner - 1];
            let mut j_tab = vec![0.0; n_inner];
            j_tab[n_inner - 1] =
                (i_eta + 0.5 * self.eps * self.eta * self.eta).exp() * gaussian_tail_scaled(self.eta, self.k());
            for i in (0..n_inner - 1).rev() {
                let (a, b) = (self.grid[i], self.grid[i + 1]);
                let f = |u: f64| (self.i_in_panel(i, u) + 0.5 * self.eps * u * u).exp();
                j_tab[i] = j_tab[i + 1] + panel(&f, a, b, i == 0);
            }
            self.j_tab = j_tab;
            if self.i_tab.iter().chain(&self.j_tab).any(|v| !v.is_finite()) {
                return Err(invalid("∫κ⁺ on (0, η] is not finite"));
            }
        }

        let n = self.grid.len();
        let mut psi_prime = vec![0.0; n];
        for (i, &r) in self.grid.iter().enumerate() {
            psi_prime[i] = if i < n_inner { (-self.i_tab[i]).exp() * self.j_tab[i] } else { self.outer_psi_prime(r) };
        }
        let mut psi = vec![0.0; n];
        for i in 0..n - 1 {
            let (a, b) = (self.grid[i], self.grid[i + 1]);
            psi[i + 1] = psi[i] + panel(&|s: f64| self.psi_prime_exact(s), a, b, i == 0);
        }
        let psi_double_prime = self
            .grid
            .iter()
            .zip(&psi_prime)
            .map(|(&r, &d)| -self.kappa_star(r) * d - (0.5 * self.eps * r * r).exp())
            .collect();
        self.psi = psi;
        self.psi_prime = psi_prime;
        self.psi_double_prime = psi_double_prime;
        Ok(())
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    fn k(&self) -> f64 {
        self.c - self.eps
    }

    pub fn r_max(&self) -> f64 {
        *self.grid.last().expect("non-empty grid")
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn psi_table(&self) -> &[f64] {
        &self.psi
    }

    pub fn psi_prime_table(&self) -> &[f64] {
        &self.psi_prime
    }

    pub fn psi_double_prime_table(&self) -> &[f64] {
        &self.psi_double_prime
    }

    /// Grid points where ψ″ may jump or κ⁺ may kink.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn kappa(&self, r: f64) -> f64 {
        (self.kappa)(r)
    }

    fn kappa_plus(&self, r: f64) -> f64 {
        (self.kappa)(r).max(0.0)
    }

    pub fn kappa_star(&self, r: f64) -> f64 {
        if r <= self.eta && self.eta > 0.0 {
            self.kappa_plus(r)
        } else {
            -self.c * r
        }
    }

    fn panel_index(&self, s: f64) -> usize {
        self.grid.partition_point(|&g| g <= s).saturating_sub(1).min(self.grid.len() - 2)
    }

    fn i_in_panel(&self, i: usize, u: f64) -> f64 {
        self.i_tab[i] + panel(&|r: f64| self.kappa_plus(r), self.grid[i], u, i == 0)
    }

    fn outer_psi_prime(&self, s: f64) -> f64 {
        (0.5 * self.eps * s * s).exp() * gaussian_tail_scaled(s, self.k())
    }

    /// ψ′(s) from its integral representation, at any `s ≥ 0`.
    pub fn psi_prime_exact(&self, s: f64) -> f64 {
        if s >= self.eta || self.eta == 0.0 {
            return self.outer_psi_prime(s);
        }
        let i = self.panel_index(s).min(self.i_tab.len() - 2);
        let b = self.grid[i + 1];
        let i_s = self.i_in_panel(i, s);
        let f = |u: f64| (self.i_in_panel(i, u) + 0.5 * self.eps * u * u).exp();
        let j_s = self.j_tab[i + 1] + panel(&f, s, b, i == 0);
        (-i_s).exp() * j_s
    }

    /// ψ(r) by quadrature from the nearest grid point; valid past `r_max`.
    pub fn psi_exact(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let rm = self.r_max();
        if r > rm {
            let n = self.psi.len();
            let f = |s: f64| self.outer_psi_prime(s);
            return self.psi[n - 1] + integrate_adaptive(&f, rm, r, 1e-14, 0.0);
        }
        let i = self.panel_index(r);
        self.psi[i] + panel(&|s: f64| self.psi_prime_exact(s), self.grid[i], r, i == 0)
    }

    /// ψ(r) by cubic Hermite interpolation of the tables (exact evaluator
    /// past `r_max`).
    pub fn psi(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= self.r_max() {
            return self.psi_exact(r);
        }
        let i = self.panel_index(r);
        let (a, b) = (self.grid[i], self.grid[i + 1]);
        let h = b - a;
        let t = (r - a) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.psi[i] + h10 * h * self.psi_prime[i] + h01 * self.psi[i + 1] + h11 * h * self.psi_prime[i + 1]
    }

    pub fn psi_prime(&self, r: f64) -> f64 {
        self.psi_prime_exact(r.max(0.0))
    }

    /// ψ″ from the construction identity.
    pub fn psi_double_prime(&self, r: f64) -> f64 {
        -self.kappa_star(r) * self.psi_prime(r) - (0.5 * self.eps * r * r).exp()
    }

    /// Relative residuals `|ψ″_fd + κ*ψ′ + e^{εr²/2}| / e^{εr²/2}` at interior
    /// grid points, with ψ″ taken by finite differences of the exact ψ′
    /// (one-sided next to knots and the origin).
    pub fn identity_residuals(&self) -> Vec<(f64, f64)> {
        let n = self.grid.len();
        let mut breaks = vec![0.0];
        breaks.extend(&self.knots);
        (1..n - 1)
            .map(|i| {
                let r = self.grid[i];
                let d2 = self.fd_second(r, &breaks);
                let w = (0.5 * self.eps * r * r).exp();
                (r, (d2 + self.kappa_star(r) * self.psi_prime(r) + w).abs() / w)
            })
            .collect()
    }

    fn fd_second(&self, r: f64, breaks: &[f64]) -> f64 {
        const H: f64 = 1e-3;
        let f = |x: f64| self.psi_prime_exact(x);
        let left = breaks.iter().filter(|&&b| b < r).fold(f64::NEG_INFINITY, |m, &b| m.max(b));
        let right = breaks.iter().filter(|&&b| b > r).fold(f64::INFINITY, |m, &b| m.min(b));
        // knots sit on the left side of their jump: ψ″(η) uses κ⁺(η)
        let at_knot = breaks.iter().any(|&b| b == r && b > 0.0);
        let room = (r - left).min(right - r);
        if !at_knot && room >= 2.5 * H {
            return (f(r - 2.0 * H) - 8.0 * f(r - H) + 8.0 * f(r + H) - f(r + 2.0 * H)) / (12.0 * H);
        }
        let (dir, space) = if at_knot || (right - r) < (r - left) { (-1.0, r - left) } else { (1.0, right - r) };
        let h = (space / 4.5).min(H);
        if !at_knot && room / 2.5 > h {
            let h = room / 2.5;
            return (f(r - 2.0 * h) - 8.0 * f(r - h) + 8.0 * f(r + h) - f(r + 2.0 * h)) / (12.0 * h);
        }
        let p = |j: f64| f(r + dir * j * h);
        dir * (-25.0 * p(0.0) + 48.0 * p(1.0) - 36.0 * p(2.0) + 16.0 * p(3.0) - 3.0 * p(4.0)) / (12.0 * h)
    }

    /// CSV rows `r,psi,psi_prime,psi_double_prime,margin`, margin being
    /// `ψ″ + κψ′ + λψ`.
    pub fn write_csv<W: Write>(&self, lambda: f64, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "psi", "psi_prime", "psi_double_prime", "margin"])?;
        for i in 0..self.grid.len() {
            let r = self.grid[i];
            let m = self.psi_double_prime[i] + self.kappa(r) * self.psi_prime[i] + lambda * self.psi[i];
            w.write_record([
                r.to_string(),
                self.psi[i].to_string(),
                self.psi_prime[i].to_string(),
                self.psi_double_prime[i].to_string(),
                m.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, at_origin: bool) -> f64 {
    // the panel touching 0 may carry an integrable singularity of κ⁺
    if at_origin {
        integrate_adaptive(f, a, b, 1e-14, 0.0)
    } else {
        integrate_panel(f, a, b)
    }
}

/// `0`, a geometric run from `GRID_START` up to the uniform spacing, then a
/// uniform run to `r_max`, with the knots merged in.
fn make_grid(r_max: f64, grid_size: usize, knots: &[f64]) -> Vec<f64> {
    let n_uniform = grid_size * 7 / 8;
    let h = r_max / n_uniform as f64;
    let n_geo = grid_size - n_uniform - 1;
    let mut g = vec![0.0];
    if h > GRID_START {
        let q = (h / GRID_START).powf(1.0 / n_geo as f64);
        g.extend((0..n_geo).map(|k| GRID_START * q.powi(k as i32)));
    }
    g.extend((1..=n_uniform).map(|k| h * k as f64));
    *g.last_mut().expect("non-empty") = r_max;
    g.extend(knots.iter().copied().filter(|&k| k > 0.0 && k < r_max));
    g.sort_by(f64::total_cmp);
    // drop points crowding a knot so no panel is degenerate
    let mut out: Vec<f64> = Vec::with_capacity(g.len());
    for x in g {
        if let Some(&last) = out.last() {
            if x - last <= 1e-9 * x.max(1e-6) {
                if knots.contains(&x) {
                    *out.last_mut().expect("non-empty") = x;
                }
                continue;
            }
        }
        out.push(x);
    }
    out
}

/// `C₀(ε)`: the larger of the two closed-form bounds on `sup ψ₁/ψ₂`.
pub fn c0_constant(eps: f64, c: f64) -> Result<f64> {
    let (first, second) = c0_branches(eps, c)?;
    Ok(first.max(second))
}

pub fn c0_branches(eps: f64, c: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < c && c.is_finite()) {
        return Err(invalid(format!("C₀ needs 0 < ε < c, got ε = {eps}, c = {c}")));
    }
    let e2 = std::f64::consts::E.powi(2);
    let k = c - eps;
    let se = eps.sqrt();
    let first = 2.0 * e2 / eps * (1.0 + 2.0 / se) * (2.0 / k).sqrt();
    let second = (2.0 + se) / (eps * (1.0 - (-2.0f64).exp()))
        * (2.0 * std::f64::consts::SQRT_2 * e2 / (eps * k).sqrt() + 1.0 / k);
    Ok((first, second))
}

/// `C̄₀ = min(2, 2/ε)`.
pub fn cbar0(eps: f64) -> f64 {
    2f64.min(2.0 / eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerConstant {
    pub p: f64,
    pub c2: f64,
}

/// λ and the companion constants of one linear certificate.
#[derive(Debug, Clone, Serialize)]
pub struct RateCertificate {
    pub lambda: f64,
    #[serde(rename = "C0")]
    pub c0: f64,
    #[serde(rename = "Cbar0")]
    pub cbar0: f64,
    /// Two-sided sandwich constant; valid on `[0, r_max]` only.
    #[serde(rename = "C1")]
    pub c1: Option<f64>,
    /// Upper sandwich constant `sup ψ/g` (1% inflated), valid for every `r`.
    #[serde(rename = "C1_upper")]
    pub c1_upper: Option<f64>,
    #[serde(rename = "C2")]
    pub c2: Vec<PowerConstant>,
    pub c: f64,
    pub eta: f64,
    pub eps: f64,
    pub kappa_plus_integral: f64,
    /// Certificate as supplied, before any θ rescaling.
    pub source: Certificate,
    pub psi_eta: Option<f64>,
    pub r_max: Option<f64>,
}

/// `λ = (C̄₀/C₀) exp(−cη²/2 − ∫_0^η κ⁺)`.
pub fn lambda_rate(profile: &DissipativityProfile, eps: f64, c: f64, eta: f64) -> Result<RateCertificate> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(invalid(format!("η must be non-negative, got {eta}")));
    }
    let c0 = c0_constant(eps, c)?;
    let cb = cbar0(eps);
    let kpi = profile.kappa_plus_integral(eta);
    if !kpi.is_finite() {
        return Err(invalid("∫κ⁺ on (0, η] is not finite"));
    }
    let lambda = cb / c0 * (-0.5 * c * eta * eta - kpi).exp();
    Ok(RateCertificate {
        lambda,
        c0,
        cbar0: cb,
        c1: None,
        c1_upper: None,
        c2: Vec::new(),
        c,
        eta,
        eps,
        kappa_plus_integral: kpi,
        source: Certificate::linear(c, eta)?,
        psi_eta: None,
        r_max: None,
    })
}

/// Full certificate for a profile: θ-rescaling, default `ε = c/2`, ψ, λ and
/// the sandwich constants for every `p` in `ps`.
pub fn certify(
    profile: &DissipativityProfile,
    eps: Option<f64>,
    ps: &[f64],
) -> Result<(AuxiliaryFunction, RateCertificate)> {
    let source = profile.certificate().ok_or(Error::MissingCertificate)?;
    let lin = source.linearized()?;
    let eps = eps.unwrap_or(0.5 * lin.c);
    let mut rate = lambda_rate(profile, eps, lin.c, lin.eta)?;
    rate.source = source;
    let p_max = ps.iter().copied().fold(1.0, f64::max);
    let r_need = (8.0 / eps.sqrt()).max(p_max * 1f64.max(2.0 / eps.sqrt()));
    let lin_profile = profile.clone().with_certificate(lin);
    let aux = build_psi(&lin_profile, eps, r_need, DEFAULT_GRID_SIZE)?;
    let sw = sandwich_constants(&aux, ps)?;
    rate.c1 = Some(sw.c1);
    rate.c1_upper = Some(sw.c1_upper);
    rate.c2 = sw.c2;
    rate.psi_eta = Some(aux.psi_exact(lin.eta));
    rate.r_max = Some(aux.r_max());
    Ok((aux, rate))
}

impl RateCertificate {
    pub fn c2_for(&self, p: f64) -> Result<f64> {
        self.c2
            .iter()
            .find(|pc| pc.p == p)
            .map(|pc| pc.c2)
            .ok_or_else(|| invalid(format!("C2 was not computed for p = {p}")))
    }

    /// Prefactor `C` of the `W_p` bound, assembled from the chaining argument
    /// (and, for θ ≥ 2 certificates, the hybrid-coupling branches).
    pub fn prefactor(&self, sigma_cond: f64, p: f64) -> Result<Prefactor> {
        if p < 1.0 {
            return Err(invalid(format!("p must be at least 1, got {p}")));
        }
        let c2 = self.c2_for(p)?;
        let c1u = self.c1_upper.ok_or_else(|| invalid("sandwich constants missing"))?;
        let c6 = sigma_cond;
        // chaining step length, in σ⁻¹ units
        let ell = if self.eta > 0.0 { self.eta } else { 1.0 };
        let g_ell = 1f64.max((0.5 * self.eps * ell * ell).exp_m1() / ell);
        let c5 = c2 * c1u * g_ell;
        let c7 = c6.powf(p + 1.0) * c5;
        let main = c7.powf(1.0 / p) * (1.0 + c6 / ell).powf(1.0 - 1.0 / p);
        let (mut large, mut hybrid) = (None, None);
        let theta = self.source.theta;
        if theta >= 2.0 && self.source.eta > 0.0 {
            let c = self.source.c;
            let psi_eta = self.psi_eta.ok_or_else(|| invalid("ψ(η) missing"))?;
            let t0 = hitting_time_bound(&self.source);
            let cb = c6 * (c2 * psi_eta * (self.lambda * t0).exp()).powf(1.0 / p);
            let t1 = t0.min(1.0);
            let m = (2.0 * c * (theta - 1.0) * t1).powf(-1.0 / (theta - 1.0)) * t1;
            let ct = c6 * (self.lambda * t0 / p).exp() * (m.powf(p) + c2 * psi_eta).powf(1.0 / p);
            large = Some(cb);
            hybrid = Some(ct);
        }
        let value = [Some(main), large, hybrid].into_iter().flatten().fold(0.0, f64::max);
        Ok(Prefactor { main, large_time: large, hybrid, value })
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Prefactor {
    pub main: f64,
    pub large_time: Option<f64>,
    pub hybrid: Option<f64>,
    pub value: f64,
}

/// `t₀ = η^{1−θ}/(2c(θ−1))`: under `κ(r) ≤ −cr^θ` the synchronous separation
/// reaches η by this time from any start.
pub fn hitting_time_bound(cert: &Certificate) -> f64 {
    cert.eta.powf(1.0 - cert.theta) / (2.0 * cert.c * (cert.theta - 1.0))
}

/// Distance gauge multiplying `Ce^{−λt/p}`.
pub fn gauge(p: f64, dist: f64, t: f64, theta: f64) -> f64 {
    if dist <= 1.0 {
        dist.powf(1.0 / p)
    } else if theta >= 2.0 {
        dist.min(1.0 / t.min(1.0))
    } else {
        dist
    }
}

/// Right-hand side `C e^{−λt/p} · gauge(|x − y|)`; `c` overrides the
/// computed prefactor.
pub fn wp_bound(
    cert: &RateCertificate,
    model: &DriftModel,
    p: f64,
    t: f64,
    x: &[f64],
    y: &[f64],
    c: Option<f64>,
) -> Result<f64> {
    if x.len() != model.dim() || y.len() != model.dim() {
        return Err(invalid("points do not match the model dimension"));
    }
    let pref = match c {
        Some(v) if v > 0.0 => v,
        Some(v) => return Err(invalid(format!("prefactor must be positive, got {v}"))),
        None => cert.prefactor(model.sigma().cond(), p)?.value,
    };
    let dist = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(pref * (-cert.lambda * t / p).exp() * gauge(p, dist, t, cert.source.theta))
}

/// Per-point margins of `ψ″ + κψ′ + λψ ≤ tol`.
#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    pub lambda: f64,
    pub margins: Vec<(f64, f64)>,
    pub max_margin: f64,
    pub pass: bool,
}

pub fn verify_lyapunov_inequality(
    aux: &AuxiliaryFunction,
    cert: &RateCertificate,
    kappa: impl Fn(f64) -> f64,
) -> LyapunovReport {
    verify_with_rate(aux, cert.lambda, kappa, 1e-8)
}

pub fn verify_with_rate(aux: &AuxiliaryFunction, lambda: f64, kappa: impl Fn(f64) -> f64, tol: f64) -> LyapunovReport {
    let g = aux.grid();
    let margins: Vec<(f64, f64)> = (0..g.len())
        .map(|i| {
            let r = g[i];
            let d1 = aux.psi_prime_table()[i];
            // the identity at r = 0 involves κ*(0⁺)ψ′(0) only through κ·ψ′
            let k = if r == 0.0 { aux.kappa_star(0.0) } else { kappa(r) };
            (r, aux.psi_double_prime_table()[i] + k * d1 + lambda * aux.psi_table()[i])
        })
        .collect();
    let max_margin = margins.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    LyapunovReport { lambda, pass: max_margin <= tol, margins, max_margin }
}

/// Largest rate the inequality admits on the grid:
/// `min_{r>0} −(ψ″ + κψ′)/ψ`.
pub fn max_admissible_rate(aux: &AuxiliaryFunction, kappa: impl Fn(f64) -> f64) -> f64 {
    let g = aux.grid();
    (1..g.len())
        .map(|i| -(aux.psi_double_prime_table()[i] + kappa(g[i]) * aux.psi_prime_table()[i]) / aux.psi_table()[i])
        .fold(f64::INFINITY, f64::min)
}

/// `g(r) = r ∨ (e^{εr²/2} − 1)`.
pub fn sandwich_gauge(eps: f64, r: f64) -> f64 {
    r.max((0.5 * eps * r * r).exp_m1())
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichConstants {
    pub c1: f64,
    pub c1_upper: f64,
    pub c2: Vec<PowerConstant>,
}

impl SandwichConstants {
    /// Both sandwich sides and every `r^p ≤ C₂ψ` at the given points
    /// (all within `[0, r_max]`).
    pub fn holds_at(&self, aux: &AuxiliaryFunction, points: &[f64]) -> bool {
        points.iter().filter(|&&r| r > 0.0).all(|&r| {
            let psi = aux.psi_exact(r);
            let g = sandwich_gauge(aux.eps(), r);
            g / self.c1 <= psi
                && psi <= self.c1 * g
                && psi <= self.c1_upper * g
                && self.c2.iter().all(|pc| r.powf(pc.p) <= pc.c2 * psi)
        })
    }
}

pub fn sandwich_constants(aux: &AuxiliaryFunction, ps: &[f64]) -> Result<SandwichConstants> {
    let eps = aux.eps();
    let r_max = aux.r_max();
    let need = 8.0 / eps.sqrt();
    if r_max < need {
        return Err(Error::GridTooShort { r_max, required: need });
    }
    let g = aux.grid();
    let psi = aux.psi_table();
    let mut lo_hi = 0f64;
    let mut upper = 0f64;
    for i in 1..g.len() {
        let gg = sandwich_gauge(eps, g[i]);
        lo_hi = lo_hi.max(psi[i] / gg).max(gg / psi[i]);
        upper = upper.max(psi[i] / gg);
    }
    let mut c2 = Vec::with_capacity(ps.len());
    for &p in ps {
        if p < 1.0 {
            return Err(invalid(format!("p must be at least 1, got {p}")));
        }
        let need = p * 1f64.max(2.0 / eps.sqrt());
        if r_max < need {
            return Err(Error::GridTooShort { r_max, required: need });
        }
        let ratio: Vec<f64> = (1..g.len()).map(|i| g[i].powf(p) / psi[i]).collect();
        // past √((p+2)/ε) the ratio decays like r^{p+2}e^{−εr²/2}
        let tail = &ratio[ratio.len() * 9 / 10..];
        if tail.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::GridTooShort { r_max, required: 2.0 * r_max });
        }
        let m = ratio.iter().copied().fold(0.0, f64::max);
        c2.push(PowerConstant { p, c2: 1.01 * m });
    }
    Ok(SandwichConstants { c1: 1.01 * lo_hi, c1_upper: 1.01 * upper, c2 })
}

/// `ψ₁(r)/ψ₂(r)` with `ψ₁(r) = ∫_0^r e^{cs²/2} ∫_s^∞ e^{−(c−ε)u²/2} du ds` and
/// `ψ₂(r) = (e^{εr²/2} − 1)/(r(1 + r))`.
pub fn psi1_psi2_ratio(eps: f64, c: f64, r: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < c) || !(r > 0.0) {
        return Err(invalid("ratio needs 0 < ε < c and r > 0"));
    }
    let k = c - eps;
    let f = |s: f64| (0.5 * eps * s * s).exp() * gaussian_tail_scaled(s, k);
    let psi1 = integrate_adaptive(&f, 0.0, r, 1e-14, 0.0);
    let psi2 = (0.5 * eps * r * r).exp_m1() / (r * (1.0 + r));
    Ok(psi1 / psi2)
}

/// Concave gauge `φ_p`: `r^{1/p}` below `p^{−p/(p−1)}`, affine with matching
/// slope above; `φ₁(r) = r`.
pub fn phi_p(p: f64, r: f64) -> f64 {
    if p == 1.0 {
        return r;
    }
    let knot = p.powf(-p / (p - 1.0));
    if r < knot {
        r.powf(1.0 / p)
    } else {
        r - knot + p.powf(-1.0 / (p - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::Family;
    use proptest::prelude::*;

    fn linear_profile(c: f64) -> DissipativityProfile {
        DissipativityProfile::from_fn("lin", move |r| -c * r).with_certificate(Certificate::linear(c, 0.0).unwrap())
    }

    fn dw_profile() -> DissipativityProfile {
        let m = DriftModel::with_identity(1, Family::DoubleWell).unwrap();
        let eta = 2.0 * 2f64.sqrt();
        DissipativityProfile::from_model(&m).unwrap().with_certificate(Certificate::new(1.0 / 16.0, eta, 3.0).unwrap())
    }

    #[test]
    fn c0_values() {
        let (b1, b2) = c0_branches(0.5, 1.0).unwrap();
        assert!(b2 > b1);
        assert!((c0_constant(0.5, 1.0).unwrap() - 274.25211748633967).abs() < 1e-9);
        let (b1, _) = c0_branches(1.0, 2.0).unwrap();
        let e2 = std::f64::consts::E.powi(2);
        assert!((b1 - 6.0 * 2f64.sqrt() * e2).abs() < 1e-12);
        assert!((c0_constant(1.0, 2.0).unwrap() - 75.98115063071118).abs() < 1e-9);
        assert!(c0_constant(1.0 - 1e-9, 1.0).unwrap() > 1e9);
        assert!(c0_constant(1.0, 1.0).is_err());
    }

    #[test]
    fn lambda_examples() {
        let cert = lambda_rate(&linear_profile(1.0), 0.5, 1.0, 0.0).unwrap();
        assert!((cert.lambda - 0.007292559920160393).abs() < 1e-15);
        assert_eq!(cbar0(1.0), 2.0);
        let lin = dw_profile().certificate().unwrap().linearized().unwrap();
        assert!((lin.c - 0.5).abs() < 1e-15);
        let r = lambda_rate(&dw_profile(), 0.25, lin.c, lin.eta).unwrap();
        assert!((r.kappa_plus_integral - 0.5).abs() < 1e-12);
        let want = 2.0 / c0_constant(0.25, 0.5).unwrap() * (-2.5f64).exp();
        assert!((r.lambda - want).abs() < 1e-15 * want.max(1.0));
    }

    #[test]
    fn lambda_monotone_in_eta_and_vanishes_near_c() {
        let p = dw_profile();
        let mut prev = f64::INFINITY;
        for eta in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let l = lambda_rate(&p, 0.25, 0.5, eta).unwrap().lambda;
            assert!(l > 0.0 && l < prev);
            prev = l;
        }
        let near = lambda_rate(&linear_profile(1.0), 1.0 - 1e-10, 1.0, 0.0).unwrap().lambda;
        assert!(near < 1e-8);
    }

    #[test]
    fn psi_examples() {
        let aux = build_psi(&linear_profile(1.0), 0.5, 0.0, DEFAULT_GRID_SIZE).unwrap();
        assert_eq!(aux.psi(0.0), 0.0);
        assert!((aux.psi_prime(0.0) - std::f64::consts::PI.sqrt()).abs() < 1e-14);
        assert!((aux.psi_exact(1.0) / 1.4971036680861127 - 1.0).abs() < 1e-12);
        assert!((aux.psi(1.0) / 1.4971036680861127 - 1.0).abs() < 1e-10);
        assert!(aux.psi_prime_table().iter().all(|&d| d > 0.0));
        assert!(aux.psi_table().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn psi_matches_trapezoid_double_integral() {
        // ψ(1) = ∫_0^1 e^{s²/2} ∫_s^∞ e^{−u²/4} du ds, brute force
        let (umax, n) = (20.0, 400_000);
        let h = umax / n as f64;
        let f = |u: f64| (-0.25 * u * u).exp();
        // tail[i] = ∫_{ih}^{umax}
        let mut tail = vec![0.0; n + 1];
        for i in (0..n).rev() {
            let u = i as f64 * h;
            tail[i] = tail[i + 1] + 0.5 * h * (f(u) + f(u + h));
        }
        let m = (1.0 / h).round() as usize;
        let g = |i: usize| {
            let s = i as f64 * h;
            (0.5 * s * s).exp() * tail[i]
        };
        let brute: f64 = (0..m).map(|i| 0.5 * h * (g(i) + g(i + 1))).sum();
        let aux = build_psi(&linear_profile(1.0), 0.5, 0.0, DEFAULT_GRID_SIZE).unwrap();
        assert!((aux.psi(1.0) / brute - 1.0).abs() < 1e-6, "{} vs {brute}", aux.psi(1.0));
    }

    #[test]
    fn double_well_psi_matches_frozen_quadrature() {
        let p = dw_profile();
        let lin = p.certificate().unwrap().linearized().unwrap();
        let aux = build_psi(&p.clone().with_certificate(lin), 0.25, 0.0, DEFAULT_GRID_SIZE).unwrap();
        let eta = 2.0 * 2f64.sqrt();
        for (r, psi, d) in [
            (0.5, 5.183_233_619_523_138, 9.708_336_812_838_699),
            (2.0, 15.593539673689385, 4.660_524_206_377_072),
            (eta, 18.791_173_933_306_93, 2.913435658016283),
            (5.0, 33.912_628_017_026_15, 16.126073538325342),
        ] {
            assert!((aux.psi_exact(r) / psi - 1.0).abs() < 1e-12, "r={r} {}", aux.psi_exact(r));
            assert!((aux.psi(r) / psi - 1.0).abs() < 1e-10);
            assert!((aux.psi_prime(r) / d - 1.0).abs() < 1e-12, "r={r}");
        }
        assert!(aux.knots().iter().any(|&k| (k - 2.0).abs() < 1e-12));
    }

    #[test]
    fn build_psi_rejects_bad_input() {
        assert!(build_psi(&linear_profile(1.0), 1.0, 0.0, 256).is_err());
        assert!(build_psi(&dw_profile(), 0.01, 0.0, 256).is_err());
        let bare = DissipativityProfile::from_fn("x", |r| -r);
        assert!(matches!(build_psi(&bare, 0.5, 0.0, 256), Err(Error::MissingCertificate)));
    }

    #[test]
    fn identity_holds_linear() {
        let aux = build_psi(&linear_profile(1.0), 0.5, 0.0, DEFAULT_GRID_SIZE).unwrap();
        let worst = aux.identity_residuals().iter().map(|x| x.1).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn lyapunov_inequality_and_slack() {
        let p = linear_profile(0.5);
        let (aux, cert) = certify(&p, Some(0.25), &[1.0]).unwrap();
        let rep = verify_lyapunov_inequality(&aux, &cert, |r| -0.5 * r);
        assert!(rep.pass, "{}", rep.max_margin);
        let lmax = max_admissible_rate(&aux, |r| -0.5 * r);
        assert!(lmax > cert.lambda);
        assert!(!verify_with_rate(&aux, 1.01 * lmax, |r| -0.5 * r, 1e-8).pass);
        // past η, with λ = 0, the margin is exactly −e^{εr²/2}
        let r0 = verify_with_rate(&aux, 0.0, |r| -0.5 * r, 0.0);
        for &(r, m) in r0.margins.iter().skip(1).step_by(97) {
            let w = (0.125 * r * r).exp();
            assert!((m + w).abs() <= 1e-12 * w);
        }
    }

    #[test]
    fn sandwich_examples() {
        let aux = build_psi(&linear_profile(1.0), 0.5, 0.0, DEFAULT_GRID_SIZE).unwrap();
        let sw = sandwich_constants(&aux, &[1.0, 2.0]).unwrap();
        let c21 = sw.c2[0].c2;
        assert!(c21 <= sw.c1);
        // 1/ψ′(0) is the small-r limit of g/ψ
        let r = 1e-6;
        assert!((sandwich_gauge(0.5, r) / aux.psi_exact(r) - 1.0 / aux.psi_prime(0.0)).abs() < 1e-5);
        // r²/ψ over a fine grid
        let brute = (1..=1_000_000).map(|i| 16.0 * i as f64 / 1e6).map(|r| r * r / aux.psi(r)).fold(0.0, f64::max);
        assert!((sw.c2[1].c2 / brute - 1.0).abs() < 0.02);
        let shifted: Vec<f64> = aux.grid().windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        assert!(sw.holds_at(&aux, &shifted));

        let short = build_psi(&linear_profile(1.0), 0.5, 0.0, 256).unwrap();
        assert!(matches!(sandwich_constants(&short, &[40.0]), Err(Error::GridTooShort { .. })));
    }

    #[test]
    fn ratio_limits() {
        let small = psi1_psi2_ratio(1.0, 2.0, 1e-3).unwrap();
        let lim0 = 2.0 * (std::f64::consts::PI / 2.0).sqrt();
        assert!((small - lim0).abs() < 1e-2);
        assert!((small - 2.50813).abs() < 1e-4);
        let big = psi1_psi2_ratio(1.0, 2.0, 12.0).unwrap();
        assert!((big - 1.0).abs() < 0.1);
        for i in 1..200 {
            let r = 12.0 * i as f64 / 200.0;
            assert!(psi1_psi2_ratio(1.0, 2.0, r).unwrap() <= c0_constant(1.0, 2.0).unwrap());
        }
    }

    #[test]
    fn phi_p_examples() {
        assert_eq!(phi_p(1.0, 7.0), 7.0);
        let left = phi_p(2.0, 0.25 - 1e-15);
        let right = phi_p(2.0, 0.25);
        assert!((left - 0.5).abs() < 1e-14 && (right - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gauge_examples() {
        assert_eq!(gauge(2.0, 1.0, 3.0, 1.0), 1.0);
        assert_eq!(gauge(2.0, 1.0, 3.0, 3.0), 1.0);
        assert_eq!(gauge(1.0, 10.0, 0.01, 2.0), 10.0);
        assert_eq!(gauge(1.0, 200.0, 0.01, 2.0), 100.0);
        assert_eq!(gauge(1.0, 10.0, 0.01, 1.0), 10.0);
    }

    #[test]
    fn wp_bound_decreases_in_time() {
        let m = DriftModel::with_identity(1, Family::DoubleWell).unwrap();
        let (_, cert) = certify(&dw_profile(), None, &[1.0, 2.0]).unwrap();
        let mut prev = f64::INFINITY;
        for t in [0.0, 1.0, 10.0, 100.0, 1e4, 1e6] {
            let b = wp_bound(&cert, &m, 2.0, t, &[5.0], &[-5.0], None).unwrap();
            assert!(b <= prev && b > 0.0);
            prev = b;
        }
        assert!(prev < 1e-10);
    }

    proptest! {
        #[test]
        fn phi_p_sandwich(p in 1.0f64..8.0, r in 0.0f64..50.0) {
            let lo = r.max(r.powf(1.0 / p));
            let v = phi_p(p, r);
            prop_assert!(lo <= v * (1.0 + 1e-12) + 1e-15);
            prop_assert!(v <= (r + r.powf(1.0 / p)) * (1.0 + 1e-12));
            prop_assert!(v <= 2.0 * lo * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn phi_p_is_concave_increasing(p in 1.0f64..8.0, a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let m = 0.5 * (a + b);
            prop_assert!(phi_p(p, m) + 1e-12 >= 0.5 * (phi_p(p, a) + phi_p(p, b)));
            prop_assert!((a <= b) == (phi_p(p, a) <= phi_p(p, b)) || a == b);
        }
    }
}
