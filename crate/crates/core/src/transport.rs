//! Exact optimal transport between small empirical measures, and the
//! coupling-based total-variation bound.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::coupling::{CouplingEnsemble, CI_Z};
use crate::drift::ScalarFn;
use crate::error::{invalid, Error, Result};

/// Largest instance the assignment solver accepts.
pub const MAX_ASSIGNMENT: usize = 4096;
/// Largest instance the permutation oracle accepts.
pub const MAX_ORACLE: usize = 8;

/// Finite point cloud with probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    /// Row-major `n × d`.
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Uniform weights on `points` (row-major, `d` coordinates each).
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(invalid(format!("{} coordinates do not split into points of dimension {dim}", points.len())));
        }
        let n = points.len() / dim;
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() != dim * weights.len() {
            return Err(invalid("points and weights disagree in count"));
        }
        if weights.is_empty() {
            return Err(invalid("empty measure"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(invalid("measure has a non-finite point"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(invalid("weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, points, weights })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("rows have different lengths"));
        }
        Self::uniform(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&v| (v - w).abs() <= 1e-15)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Ground cost as a function of Euclidean distance.
#[derive(Clone)]
pub enum Ground {
    /// `r^p`; the reported distance is the p-th root of the cost.
    Lp(f64),
    /// The concave gauge `φ_p`.
    PhiP(f64),
    /// Any other gauge (e.g. ψ); the raw cost is reported.
    Gauge(ScalarFn),
}

impl fmt::Debug for Ground {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ground::Lp(p) => write!(f, "Lp({p})"),
            Ground::PhiP(p) => write!(f, "PhiP({p})"),
            Ground::Gauge(_) => f.write_str("Gauge(..)"),
        }
    }
}

impl Ground {
    fn validate(&self) -> Result<()> {
        match self {
            Ground::Lp(p) | Ground::PhiP(p) if !(*p >= 1.0 && p.is_finite()) => {
                Err(invalid(format!("p must be at least 1, got {p}")))
            }
            _ => Ok(()),
        }
    }

    pub fn cost(&self, r: f64) -> f64 {
        match self {
            Ground::Lp(p) => r.powf(*p),
            Ground::PhiP(p) => crate::lyapunov::phi_p(*p, r),
            Ground::Gauge(g) => g(r),
        }
    }

    /// Distance reported for an optimal total cost.
    pub fn finish(&self, cost: f64) -> f64 {
        match self {
            Ground::Lp(p) => cost.max(0.0).powf(1.0 / p),
            _ => cost,
        }
    }
}

/// Coupling as a list of `(source, target, mass)` triples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    pub pairs: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

impl TransportPlan {
    /// Row and column sums match the weights of `mu` and `nu` within `tol`.
    pub fn is_feasible(&self, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, tol: f64) -> bool {
        let mut rows = vec![0.0; mu.len()];
        let mut cols = vec![0.0; nu.len()];
        for &(i, j, m) in &self.pairs {
            if i >= rows.len() || j >= cols.len() || m < 0.0 {
                return false;
            }
            rows[i] += m;
            cols[j] += m;
        }
        rows.iter().zip(mu.weights()).all(|(a, b)| (a - b).abs() <= tol)
            && cols.iter().zip(nu.weights()).all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Weighted ground cost of the plan's pairs.
    pub fn evaluate(&self, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, ground: &Ground) -> f64 {
        self.pairs.iter().map(|&(i, j, m)| m * ground.cost(dist(mu.point(i), nu.point(j)))).sum()
    }
}

/// First 16 hex digits of the SHA-256 of the plan's index pairs.
pub fn plan_checksum(plan: &TransportPlan) -> String {
    let mut h = Sha256::new();
    for &(i, j, _) in &plan.pairs {
        h.update((i as u64).to_le_bytes());
        h.update((j as u64).to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// `W_p` between one-dimensional measures with arbitrary weights, via the
/// monotone (quantile) coupling.
pub fn wasserstein_exact_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(invalid("the quantile method needs one-dimensional measures"));
    }
    let ground = Ground::Lp(p);
    ground.validate()?;
    let sorted = |m: &EmpiricalMeasure| {
        let mut v: Vec<(f64, f64)> = m.points.iter().copied().zip(m.weights.iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let (a, b) = (sorted(mu), sorted(nu));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut cost = 0.0;
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        cost += m * (a[i].0 - b[j].0).abs().powf(p);
        ra -= m;
        rb -= m;
        // a leftover below rounding level belongs to the other side's next atom
        if ra <= rb {
            i += 1;
            ra = a.get(i).map_or(0.0, |x| x.1);
        } else {
            j += 1;
            rb = b.get(j).map_or(0.0, |x| x.1);
        }
    }
    Ok(ground.finish(cost))
}

fn check_assignment(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, limit: usize) -> Result<()> {
    if mu.dim() != nu.dim() {
        return Err(invalid("measures live in different dimensions"));
    }
    if mu.len() != nu.len() || !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::UnequalSizes(mu.len(), nu.len()));
    }
    if mu.len() > limit {
        return Err(Error::SizeLimit { n: mu.len(), limit });
    }
    Ok(())
}

fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, ground: &Ground) -> Vec<f64> {
    let n = mu.len();
    let mut a = vec![0.0; n * n];
    a.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let x = mu.point(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = ground.cost(dist(x, nu.point(j)));
        }
    });
    a
}

/// Minimum-cost perfect matching of a dense `n × n` matrix by successive
/// shortest augmenting paths with dual potentials (one Dijkstra-like search
/// per row, duals updated once per augmentation). Returns the column of each
/// row.
fn solve_assignment(a: &[f64], n: usize) -> Vec<usize> {
    const FREE: usize = usize::MAX;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col4row = vec![FREE; n];
    let mut row4col = vec![FREE; n];
    let mut path = vec![FREE; n];
    let mut spc = vec![0.0; n];
    let mut remaining = vec![0usize; n];
    let mut sr = vec![false; n];
    let mut sc = vec![false; n];
    for cur in 0..n {
        spc.fill(f64::INFINITY);
        sr.fill(false);
        sc.fill(false);
        for (k, r) in remaining.iter_mut().enumerate() {
            *r = n - 1 - k;
        }
        let mut n_rem = n;
        let mut min_val = 0.0;
        let mut i = cur;
        let sink = loop {
            sr[i] = true;
            let row = &a[i * n..(i + 1) * n];
            let base = min_val - u[i];
            let mut lowest = f64::INFINITY;
            let mut index = 0;
            for (k, &j) in remaining[..n_rem].iter().enumerate() {
                let r = base + row[j] - v[j];
                if r < spc[j] {
                    path[j] = i;
                    spc[j] = r;
                }
                // ties go to free columns, which ends the search sooner
                if spc[j] < lowest || (spc[j] == lowest && row4col[j] == FREE) {
                    lowest = spc[j];
                    index = k;
                }
            }
            min_val = lowest;
            let j = remaining[index];
            sc[j] = true;
            n_rem -= 1;
            remaining[index] = remaining[n_rem];
            if row4col[j] == FREE {
                break j;
            }
            i = row4col[j];
        };
        u[cur] += min_val;
        for r in 0..n {
            if sr[r] && r != cur {
                u[r] += min_val - spc[col4row[r]];
            }
        }
        for j in 0..n {
            if sc[j] {
                v[j] -= min_val - spc[j];
            }
        }
        let mut j = sink;
        loop {
            let i = path[j];
            row4col[j] = i;
            std::mem::swap(&mut col4row[i], &mut j);
            if i == cur {
                break;
            }
        }
    }
    col4row
}

/// Exact optimal transport between equal-size uniform samples. Returns the
/// distance (p-th root for `Lp`, raw cost otherwise) and the optimal plan.
pub fn wasserstein_exact_assignment(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    ground: &Ground,
) -> Result<(f64, TransportPlan)> {
    ground.validate()?;
    check_assignment(mu, nu, MAX_ASSIGNMENT)?;
    let n = mu.len();
    let a = cost_matrix(mu, nu, ground);
    let cols = solve_assignment(&a, n);
    let w = 1.0 / n as f64;
    // summed in row order, exactly as the oracle does
    let total: f64 = cols.iter().enumerate().map(|(i, &j)| a[i * n + j]).sum();
    let cost = total * w;
    let pairs = cols.iter().enumerate().map(|(i, &j)| (i, j, w)).collect();
    Ok((ground.finish(cost), TransportPlan { pairs, cost }))
}

/// Optimal cost under a concave gauge with `gauge(0) = 0`.
pub fn wasserstein_gauge(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    gauge: impl Fn(f64) -> f64 + Send + Sync + 'static,
) -> Result<f64> {
    Ok(wasserstein_exact_assignment(mu, nu, &Ground::Gauge(std::sync::Arc::new(gauge)))?.0)
}

/// Exhaustive minimum over all `n!` matchings (Heap's algorithm).
pub fn brute_force_ot_oracle(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, ground: &Ground) -> Result<f64> {
    ground.validate()?;
    check_assignment(mu, nu, MAX_ORACLE)?;
    let n = mu.len();
    let a = cost_matrix(mu, nu, ground);
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| a[i * n + j]).sum::<f64>();
    let mut best = eval(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(ground.finish(best / n as f64))
}

/// Coupling inequality estimate `2·P(T > t)` with a binomial interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TvEstimate {
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_paths: usize,
}

/// Upper estimate of `d_TV(δ_x P_t, δ_y P_t)` from the uncoupled fraction at
/// a recorded slice. Not capped at 1.
pub fn tv_upper_from_coupling(ens: &CouplingEnsemble, t: f64) -> Result<TvEstimate> {
    let k = ens.slice_index(t)?;
    let n = ens.n_paths();
    let q = 1.0 - ens.coupled_fraction(k);
    let se = 2.0 * (q * (1.0 - q) / n as f64).sqrt();
    let estimate = 2.0 * q;
    Ok(TvEstimate {
        t: ens.times[k],
        estimate,
        se,
        ci_low: (estimate - CI_Z * se).max(0.0),
        ci_high: (estimate + CI_Z * se).min(2.0),
        n_paths: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{simulate_ensemble, Coupling, SimConfig};
    use crate::drift::{DriftModel, Family, Sigma};
    use crate::special::normal_cdf;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn m1(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(1, xs.to_vec()).unwrap()
    }

    #[test]
    fn one_dimensional_examples() {
        assert_eq!(wasserstein_exact_1d(&m1(&[0.0]), &m1(&[1.0]), 3.0).unwrap(), 1.0);
        assert_eq!(wasserstein_exact_1d(&m1(&[0.0, 2.0]), &m1(&[3.0, 1.0]), 1.0).unwrap(), 1.0);
        assert_eq!(wasserstein_exact_1d(&m1(&[0.5, -1.0]), &m1(&[-1.0, 0.5]), 2.0).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_with_unequal_weights() {
        // all of μ's mass at 0; ν puts 1/4 at 1 and 3/4 at 3
        let mu = EmpiricalMeasure::new(1, vec![0.0], vec![1.0]).unwrap();
        let nu = EmpiricalMeasure::new(1, vec![3.0, 1.0], vec![0.75, 0.25]).unwrap();
        let w1 = wasserstein_exact_1d(&mu, &nu, 1.0).unwrap();
        assert!((w1 - 2.5).abs() < 1e-15);
        let w2 = wasserstein_exact_1d(&mu, &nu, 2.0).unwrap();
        assert!((w2 - 7f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn crossed_pair_oracle_and_solver() {
        let (mu, nu) = (m1(&[0.0, 2.0]), m1(&[3.0, 1.0]));
        let g = Ground::Lp(1.0);
        assert_eq!(brute_force_ot_oracle(&mu, &nu, &g).unwrap(), 1.0);
        let (d, plan) = wasserstein_exact_assignment(&mu, &nu, &g).unwrap();
        assert_eq!(d, 1.0);
        assert_eq!(plan.pairs, vec![(0, 1, 0.5), (1, 0, 0.5)]);
        let same = m1(&[1.0, 2.0, 3.0]);
        assert_eq!(brute_force_ot_oracle(&same, &same, &g).unwrap(), 0.0);
    }

    #[test]
    fn single_point_is_the_gauge_cost() {
        let (mu, nu) = (m1(&[0.0]), m1(&[0.04]));
        assert_eq!(wasserstein_gauge(&mu, &nu, |r| r).unwrap(), wasserstein_exact_1d(&mu, &nu, 1.0).unwrap());
        let (d, _) = wasserstein_exact_assignment(&mu, &nu, &Ground::PhiP(2.0)).unwrap();
        assert!((d - 0.2).abs() < 1e-15);
        let (d, _) = wasserstein_exact_assignment(&mu, &nu, &Ground::Lp(3.0)).unwrap();
        assert!((d - 0.04).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let g = Ground::Lp(1.0);
        assert!(matches!(
            wasserstein_exact_assignment(&m1(&[0.0]), &m1(&[0.0, 1.0]), &g),
            Err(Error::UnequalSizes(1, 2))
        ));
        let big = m1(&[0.0; 9]);
        assert!(matches!(brute_force_ot_oracle(&big, &big, &g), Err(Error::SizeLimit { n: 9, limit: 8 })));
        let huge = m1(&vec![0.0; MAX_ASSIGNMENT + 1]);
        assert!(matches!(wasserstein_exact_assignment(&huge, &huge, &g), Err(Error::SizeLimit { .. })));
        assert!(wasserstein_exact_1d(&m1(&[0.0]), &m1(&[1.0]), 0.5).is_err());
        assert!(EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.4]).is_err());
        assert!(EmpiricalMeasure::uniform(2, vec![0.0, f64::NAN]).is_err());
    }

    fn cloud(rng: &mut impl Rng, n: usize, d: usize, shift: f64) -> EmpiricalMeasure {
        let pts =
            (0..n * d).map(|k| rng.sample::<f64, _>(StandardNormal) + if k % d == 0 { shift } else { 0.0 }).collect();
        EmpiricalMeasure::uniform(d, pts).unwrap()
    }

    #[test]
    fn oracle_sweep_n7() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for k in 0..100 {
            let (mu, nu) = (cloud(&mut rng, 7, 2, 0.0), cloud(&mut rng, 7, 2, 0.5));
            let g = Ground::Lp(1.0 + (k % 2) as f64);
            let a = wasserstein_exact_assignment(&mu, &nu, &g).unwrap().0;
            let b = brute_force_ot_oracle(&mu, &nu, &g).unwrap();
            assert!((a - b).abs() <= 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn gaussian_shift_w2() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (mu, nu) = (cloud(&mut rng, 2048, 2, 0.0), cloud(&mut rng, 2048, 2, 3.0));
        let (w2, plan) = wasserstein_exact_assignment(&mu, &nu, &Ground::Lp(2.0)).unwrap();
        assert!((w2 - 3.0).abs() < 0.15, "{w2}");
        assert!(plan.is_feasible(&mu, &nu, 1e-9));
        // the first coordinate alone carries the shift
        let first = |m: &EmpiricalMeasure| m1(&(0..m.len()).map(|i| m.point(i)[0]).collect::<Vec<_>>());
        let proj = wasserstein_exact_1d(&first(&mu), &first(&nu), 2.0).unwrap();
        assert!((proj - 3.0).abs() < 0.15 && proj <= w2 + 1e-12);
    }

    #[test]
    fn phi_cost_dominates_on_the_same_plan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (mu, nu) = (cloud(&mut rng, 64, 2, 0.2), cloud(&mut rng, 64, 2, 0.0));
        for p in [1.0, 1.5, 2.0, 4.0] {
            let (_, plan) = wasserstein_exact_assignment(&mu, &nu, &Ground::PhiP(p)).unwrap();
            let phi = plan.evaluate(&mu, &nu, &Ground::PhiP(p));
            let lower =
                plan.evaluate(&mu, &nu, &Ground::Gauge(std::sync::Arc::new(move |r: f64| r.max(r.powf(1.0 / p)))));
            assert!(phi >= lower - 1e-12);
        }
    }

    #[test]
    fn checksum_is_stable() {
        let (mu, nu) = (m1(&[0.0, 2.0]), m1(&[3.0, 1.0]));
        let (_, plan) = wasserstein_exact_assignment(&mu, &nu, &Ground::Lp(1.0)).unwrap();
        let c = plan_checksum(&plan);
        assert_eq!(c.len(), 16);
        assert_eq!(c, plan_checksum(&plan.clone()));
        let swapped = TransportPlan { pairs: vec![(0, 0, 0.5), (1, 1, 0.5)], cost: 0.0 };
        assert_ne!(c, plan_checksum(&swapped));
    }

    #[test]
    fn brownian_tv_estimate() {
        let m = DriftModel::new(1, Family::Linear { k: 0.0 }, Sigma::identity(1)).unwrap();
        let cfg = SimConfig::new(1e-3, 4.0, 2000, 21, Coupling::Reflection).with_stride(250);
        let ens = simulate_ensemble(&m, &cfg, &[0.5], &[-0.5]).unwrap();
        let at0 = tv_upper_from_coupling(&ens, 0.0).unwrap();
        assert_eq!(at0.estimate, 2.0);
        for t in [1.0, 4.0] {
            let tv = tv_upper_from_coupling(&ens, t).unwrap();
            let exact = 2.0 * (2.0 * normal_cdf(1.0 / (2.0 * t.sqrt())) - 1.0);
            assert!((tv.estimate - exact).abs() <= 3.0 * tv.se + 0.02, "t={t} {} {exact}", tv.estimate);
            assert!(tv.ci_low <= (2.0 / (std::f64::consts::PI * t)).sqrt());
        }
        assert!(matches!(tv_upper_from_coupling(&ens, 0.3), Err(Error::SliceNotRecorded(_))));
    }

    fn points(n: usize, d: usize) -> impl Strategy<Value = EmpiricalMeasure> {
        prop::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| EmpiricalMeasure::uniform(d, v).unwrap())
    }

    fn triple() -> impl Strategy<Value = (EmpiricalMeasure, EmpiricalMeasure, EmpiricalMeasure)> {
        (1usize..12, 1usize..4).prop_flat_map(|(n, d)| (points(n, d), points(n, d), points(n, d)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn metric_axioms((a, b, c) in triple(), p in 1.0f64..4.0) {
            let g = Ground::Lp(p);
            let w = |x: &EmpiricalMeasure, y: &EmpiricalMeasure| wasserstein_exact_assignment(x, y, &g).unwrap().0;
            prop_assert_eq!(w(&a, &a), 0.0);
            prop_assert!((w(&a, &b) - w(&b, &a)).abs() <= 1e-9);
            prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
        }

        #[test]
        fn monotone_in_p((a, b, _) in triple(), p in 1.0f64..3.0, dq in 0.0f64..3.0) {
            let lo = wasserstein_exact_assignment(&a, &b, &Ground::Lp(p)).unwrap().0;
            let hi = wasserstein_exact_assignment(&a, &b, &Ground::Lp(p + dq)).unwrap().0;
            prop_assert!(lo <= hi + 1e-9);
        }

        #[test]
        fn one_dimensional_agrees_with_assignment(n in 1usize..40, seed in any::<u64>(), p in 1.0f64..4.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (cloud(&mut rng, n, 1, 0.0), cloud(&mut rng, n, 1, 1.0));
            let q = wasserstein_exact_1d(&a, &b, p).unwrap();
            let (s, plan) = wasserstein_exact_assignment(&a, &b, &Ground::Lp(p)).unwrap();
            prop_assert!((q - s).abs() <= 1e-9, "{} {}", q, s);
            prop_assert!(plan.is_feasible(&a, &b, 1e-9));
            prop_assert!((plan.evaluate(&a, &b, &Ground::Lp(p)) - plan.cost).abs() <= 1e-9 * (1.0 + plan.cost));
        }

        #[test]
        fn solver_matches_oracle(n in 1usize..7, seed in any::<u64>(), p in 1.0f64..3.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (cloud(&mut rng, n, 2, 0.0), cloud(&mut rng, n, 2, 0.3));
            for g in [Ground::Lp(p), Ground::PhiP(p)] {
                let s = wasserstein_exact_assignment(&a, &b, &g).unwrap().0;
                let o = brute_force_ot_oracle(&a, &b, &g).unwrap();
                prop_assert!((s - o).abs() <= 1e-12);
            }
        }
    }
}
