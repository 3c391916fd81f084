//! Paired two-sided Wilcoxon signed-rank test and summary statistics.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Largest sample size handled by exact enumeration.
pub const EXACT_MAX_N: usize = 12;
/// Smallest number of non-zero differences accepted.
pub const MIN_N: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero paired differences used.
    pub n: usize,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Two-sided p-value in (0, 1].
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of `|d|`, ties sharing the mean rank, returned
/// doubled so they are always integers.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, doubled
        let doubled = (i + 1 + j + 1) as u64;
        for &o in &order[i..=j] {
            ranks[o] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped. Up to [`EXACT_MAX_N`] pairs the null
/// distribution of the (tie-averaged) positive rank sum is enumerated
/// exactly; above that a normal approximation with tie and continuity
/// corrections is used. `p = min(1, 2·min(P(W⁺ ≤ w), P(W⁺ ≥ w)))`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(alloc::format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Validation("non-finite paired difference".into()));
    }
    if diffs.is_empty() {
        return Err(Error::DegenerateSample);
    }
    let n = diffs.len();
    if n < MIN_N {
        return Err(Error::InsufficientSample { needed: MIN_N, got: n });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| math::abs(*d)).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w_plus = w2 as f64 / 2.0;

    if n <= EXACT_MAX_N {
        let counts = rank_sum_distribution(&ranks);
        let total = (1u64 << n) as f64;
        let lower: u64 = counts[..=w2 as usize].iter().sum();
        let upper: u64 = counts[w2 as usize..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / total).min(1.0);
        return Ok(WilcoxonResult {
            n,
            w_plus,
            p_value: p,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (math::abs(w_plus - mean) - 0.5).max(0.0) / math::sqrt(var);
    let p = math::erfc(z / core::f64::consts::SQRT_2).min(1.0);
    Ok(WilcoxonResult {
        n,
        w_plus,
        p_value: p,
        exact: false,
    })
}

/// Number of sign patterns giving each doubled positive rank sum.
fn rank_sum_distribution(doubled: &[u64]) -> Vec<u64> {
    let max: u64 = doubled.iter().sum();
    let mut counts = vec![0u64; max as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Arithmetic mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, math::sqrt(var)))
}

/// Linear-interpolated percentile (`q` in [0, 100]).
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64;
    let lo = math::floor(pos) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_positive_differences() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 6]).unwrap();
        assert_eq!(r.w_plus, 21.0);
        assert_eq!(r.p_value, 0.03125);
        assert!(r.exact);
    }

    #[test]
    fn degenerate_and_small() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(wilcoxon_signed_rank(&a, &a), Err(Error::DegenerateSample)));
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::InsufficientSample { .. })
        ));
    }

    #[test]
    fn doubled_ranks_average_ties() {
        assert_eq!(doubled_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![7, 2, 7, 4]);
    }

    #[test]
    fn large_sample_is_symmetric_and_bounded() {
        let a: Vec<f64> = (0..30).map(|i| math::sin(i as f64 * 0.37)).collect();
        let b: Vec<f64> = (0..30).map(|i| math::cos(i as f64 * 0.11) * 0.5).collect();
        let p1 = wilcoxon_signed_rank(&a, &b).unwrap();
        let p2 = wilcoxon_signed_rank(&b, &a).unwrap();
        assert!(!p1.exact);
        assert!((p1.p_value - p2.p_value).abs() < 1e-12);
        assert!(p1.p_value > 0.0 && p1.p_value <= 1.0);
    }

    #[test]
    fn summaries() {
        let (m, sd) = mean_sd(&[0.4, 0.6]).unwrap();
        assert!((m - 0.5).abs() < 1e-12 && (sd - 0.1).abs() < 1e-12);
        assert_eq!(mean_sd(&[0.5]), Some((0.5, 0.0)));
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 50.0), Some(3.0));
        assert_eq!(percentile(&[1.0, 2.0], 25.0), Some(1.25));
    }
}
