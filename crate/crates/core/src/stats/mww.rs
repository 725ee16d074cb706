//! Mann-Whitney-Wilcoxon rank-sum test, two-sided.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::StatsError;

/// Largest pooled size for which the exact null distribution is used.
pub const EXACT_MAX_TOTAL: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwwMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwwResult {
    /// U statistic of the first sample: its rank sum minus n1(n1+1)/2.
    pub u: f64,
    pub p_two_sided: f64,
    pub method: MwwMethod,
    pub n1: usize,
    pub n2: usize,
}

/// Midranks (1-based) of the pooled data, plus the tie term Σ(t³ - t).
fn midranks(pooled: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && pooled[idx[j]] == pooled[idx[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = rank;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

/// Null distribution of U for sample sizes (n1, n2) without ties, as counts
/// indexed by U. These are the coefficients of the Gaussian binomial
/// `prod_{i=1..n1} (1 - q^(n2+i)) / (1 - q^i)`.
pub fn rank_sum_distribution(n1: usize, n2: usize) -> Vec<u128> {
    let len = n1 * n2 + 1;
    let mut c = vec![0i128; len];
    c[0] = 1;
    for i in 1..=n1 {
        // multiply by (1 - q^(n2+i)), truncated to degree n1*n2
        let m = n2 + i;
        for k in (m..len).rev() {
            c[k] -= c[k - m];
        }
        // divide by (1 - q^i)
        for k in i..len {
            c[k] += c[k - i];
        }
    }
    c.into_iter().map(|v| v as u128).collect()
}

pub fn mww_test(a: &[f64], b: &[f64]) -> Result<MwwResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(StatsError::NonFinite);
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;

    if n1 + n2 <= EXACT_MAX_TOTAL && ties == 0.0 {
        let dist = rank_sum_distribution(n1, n2);
        let total: u128 = dist.iter().sum();
        let ui = u.round() as usize;
        let lower: u128 = dist[..=ui].iter().sum();
        let upper: u128 = dist[ui..].iter().sum();
        let p = (2.0 * lower.min(upper) as f64 / total as f64).min(1.0);
        return Ok(MwwResult {
            u,
            p_two_sided: p,
            method: MwwMethod::Exact,
            n1,
            n2,
        });
    }

    let (f1, f2) = (n1 as f64, n2 as f64);
    let n = f1 + f2;
    let mean = f1 * f2 / 2.0;
    let var = f1 * f2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let p = if var > 0.0 {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    } else {
        1.0
    };
    Ok(MwwResult {
        u,
        p_two_sided: p,
        method: MwwMethod::NormalApprox,
        n1,
        n2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let r = mww_test(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.method, MwwMethod::Exact);
        assert_eq!(r.u, 0.0);
        assert!((r.p_two_sided - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distribution_small_cases() {
        assert_eq!(rank_sum_distribution(2, 2), vec![1, 1, 2, 1, 1]);
        assert_eq!(rank_sum_distribution(1, 3), vec![1, 1, 1, 1]);
        let d = rank_sum_distribution(20, 20);
        assert_eq!(d.iter().sum::<u128>(), 137_846_528_820);
    }

    #[test]
    fn identical_samples() {
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 1.7).collect();
        let r = mww_test(&a, &a).unwrap();
        assert_eq!(r.method, MwwMethod::NormalApprox);
        assert!(r.p_two_sided >= 0.99);
        assert_eq!(r.u, 50.0);
    }

    #[test]
    fn empty_sample() {
        assert_eq!(mww_test(&[], &[1.0]).unwrap_err(), StatsError::EmptySample);
        assert_eq!(mww_test(&[1.0], &[]).unwrap_err(), StatsError::EmptySample);
    }

    #[test]
    fn all_tied_gives_p_one() {
        let r = mww_test(&[2.0; 30], &[2.0; 25]).unwrap();
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn separated_large_samples() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| 100.0 + i as f64).collect();
        let r = mww_test(&a, &b).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.p_two_sided < 1e-15);
    }
}
