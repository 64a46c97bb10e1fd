//! Repeated-run statistics: relative error reduction, one-sided Welch t-test
//! and a permutation test on the difference of means.

use super::HarnessError;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Enumerate every relabeling up to this many; sample this many beyond it.
pub const PERMUTATION_LIMIT: u64 = 100_000;

/// Variance substituted when both samples are constant but their means differ.
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mean_a: f64,
    pub mean_b: f64,
    /// `(mean_a - mean_b) / mean_a`; `None` when `mean_a` is zero.
    pub relative_error_reduction: Option<f64>,
    /// One-sided Welch t-test of `mean_b < mean_a`.
    pub welch_p: f64,
    /// One-sided permutation test of the same hypothesis.
    pub permutation_p: f64,
    /// Whether the permutation test enumerated all relabelings.
    pub permutation_exact: bool,
}

impl Comparison {
    /// Both tests land on the same side of 0.05.
    pub fn tests_agree(&self) -> bool {
        (self.welch_p < 0.05) == (self.permutation_p < 0.05)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn relative_error_reduction(mean_a: f64, mean_b: f64) -> Option<f64> {
    (mean_a != 0.0).then(|| (mean_a - mean_b) / mean_a)
}

/// p-value of the one-sided Welch test with alternative `mean(b) < mean(a)`.
pub fn welch_one_sided(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut va, mut vb) = (sample_variance(a), sample_variance(b));
    if va == 0.0 && vb == 0.0 {
        if ma == mb {
            return 1.0;
        }
        va = VARIANCE_FLOOR;
        vb = VARIANCE_FLOOR;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("degrees of freedom are positive");
    dist.sf(t).clamp(0.0, 1.0)
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// One-sided permutation test on `mean(a) − mean(b)`. Exact over all
/// relabelings when there are at most [`PERMUTATION_LIMIT`], otherwise
/// `(1 + hits) / (1 + N)` over that many seeded random relabelings.
pub fn permutation_one_sided(a: &[f64], b: &[f64], seed: u64) -> (f64, bool) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (na, n) = (a.len(), pooled.len());
    let total: f64 = pooled.iter().sum();
    let stat = |sum_a: f64| sum_a / na as f64 - (total - sum_a) / (n - na) as f64;
    let observed = stat(a.iter().sum());
    // Guards against float noise when a relabeling reproduces the observed split.
    let tolerance = 1e-12 * observed.abs().max(1.0);
    let hit = |sum_a: f64| stat(sum_a) >= observed - tolerance;

    let count = binomial(n, na);
    if count <= PERMUTATION_LIMIT {
        let mut hits = 0u64;
        let mut chosen: Vec<usize> = (0..na).collect();
        loop {
            if hit(chosen.iter().map(|&i| pooled[i]).sum()) {
                hits += 1;
            }
            // Next combination in lexicographic order.
            let Some(i) = (0..na).rev().find(|&i| chosen[i] != i + n - na) else { break };
            chosen[i] += 1;
            for j in i + 1..na {
                chosen[j] = chosen[j - 1] + 1;
            }
        }
        (hits as f64 / count as f64, true)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..n).collect();
        let mut hits = 0u64;
        for _ in 0..PERMUTATION_LIMIT {
            let (head, _) = indices.partial_shuffle(&mut rng, na);
            if hit(head.iter().map(|&i| pooled[i]).sum()) {
                hits += 1;
            }
        }
        ((1 + hits) as f64 / (1 + PERMUTATION_LIMIT) as f64, false)
    }
}

/// Compares run samples `a` (reference) and `b` (candidate): relative error
/// reduction of `b` against `a` and p-values for `mean(b) < mean(a)`.
pub fn compare_runs(a: &[f64], b: &[f64], seed: u64) -> Result<Comparison, HarnessError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(HarnessError::TooFewRuns(a.len().min(b.len())));
    }
    let (mean_a, mean_b) = (mean(a), mean(b));
    let (permutation_p, permutation_exact) = permutation_one_sided(a, b, seed);
    Ok(Comparison {
        mean_a,
        mean_b,
        relative_error_reduction: relative_error_reduction(mean_a, mean_b),
        welch_p: welch_one_sided(a, b),
        permutation_p,
        permutation_exact,
    })
}
