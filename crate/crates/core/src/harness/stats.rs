//! Small statistics helpers for the experiments.

use rand::seq::SliceRandom;

use crate::rng::{self, Purpose};

/// Ordinary least-squares line with the standard error of its slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub n: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = (rss / (nf - 2.0) / sxx).sqrt();
    Some(LinearFit { slope, intercept, slope_se, n })
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    (m, (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Sample variance and its large-sample standard error
/// `√((m₄ − s⁴)/n)`.
pub fn variance_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = v.iter().map(|a| (a - m).powi(4)).sum::<f64>() / n;
    (var, ((m4 - var * var).max(0.0) / n).sqrt())
}

/// Values of `stat` on `splits` random equal halves of the pooled rows of
/// `a` and `b` (row length `d`): the spread a two-sample statistic shows
/// when both samples come from one law.
pub fn permutation_floor(
    a: &[f64],
    b: &[f64],
    d: usize,
    splits: usize,
    seed: u64,
    stat: impl Fn(&[f64], &[f64]) -> f64 + Sync,
) -> Vec<f64> {
    use rayon::prelude::*;
    let rows: Vec<&[f64]> = a.chunks(d).chain(b.chunks(d)).collect();
    let half = rows.len() / 2;
    (0..splits)
        .into_par_iter()
        .map(|s| {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.shuffle(&mut rng::stream(seed, Purpose::Resampling, s as u64));
            let pick = |ids: &[usize]| ids.iter().flat_map(|&i| rows[i].iter().copied()).collect::<Vec<f64>>();
            stat(&pick(&idx[..half]), &pick(&idx[half..2 * half]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|t| 2.0 - 0.5 * t).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.intercept - 2.0).abs() < 1e-13 && f.slope_se < 1e-14);
        assert!(linear_fit(&x[..2], &y[..2]).is_none());
    }

    #[test]
    fn variance_of_a_two_point_law() {
        let v: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (var, se) = variance_se(&v);
        assert!((var - 1000.0 / 999.0).abs() < 1e-12);
        assert!(se < 1e-3);
    }

    #[test]
    fn floor_is_reproducible() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| i as f64 + 0.5).collect();
        let stat = |x: &[f64], y: &[f64]| x.iter().sum::<f64>() - y.iter().sum::<f64>();
        let f1 = permutation_floor(&a, &b, 1, 8, 3, stat);
        assert_eq!(f1, permutation_floor(&a, &b, 1, 8, 3, stat));
        assert_eq!(f1.len(), 8);
    }
}
