//! Two-sided Wilcoxon signed-rank test for paired samples.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use comir::stats::average_ranks;

use crate::error::{EvalError, Result};

/// Minimum number of non-zero differences.
pub const MIN_PAIRS: usize = 5;
/// Largest `n` for which the null distribution is enumerated exactly.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonTest {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Tests `a − b` for symmetry about zero. Zero differences are dropped and
/// tied magnitudes share average ranks. For `n ≤ 12` the p-value counts the
/// sign assignments whose `W+` lies at least as far from `n(n+1)/4` as the
/// observed one; above that a normal approximation with the tie-corrected
/// variance `n(n+1)(2n+1)/24 − Σ(t³−t)/48` is used, without continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonTest> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if let Some(bad) = a.iter().chain(b).find(|v| !v.is_finite()) {
        return Err(EvalError::InvalidValue(format!("paired value {bad}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(EvalError::AllZeroDifferences);
    }
    let n = diffs.len();
    if n < MIN_PAIRS {
        return Err(EvalError::TooFewPairs {
            found: n,
            needed: MIN_PAIRS,
        });
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let mean = total / 2.0;

    let (p_value, method) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, (w_plus - mean).abs(), mean), WilcoxonMethod::Exact)
    } else {
        let nf = n as f64;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ranks) / 48.0;
        let p = if var > 0.0 {
            let z = (w_plus - mean) / var.sqrt();
            2.0 * (1.0 - Normal::standard().cdf(z.abs()))
        } else {
            1.0
        };
        (p, WilcoxonMethod::Normal)
    };
    Ok(WilcoxonTest {
        n,
        w_plus,
        w_minus,
        p_value: p_value.min(1.0),
        method,
    })
}

fn exact_p(ranks: &[f64], observed_dev: f64, mean: f64) -> f64 {
    let n = ranks.len();
    let tol = 1e-9 * mean.max(1.0);
    let extreme = (0u32..1 << n)
        .filter(|mask| {
            let w: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            (w - mean).abs() >= observed_dev - tol
        })
        .count();
    extreme as f64 / (1u64 << n) as f64
}

/// `Σ (t³ − t)` over groups of tied ranks.
fn tie_term(ranks: &[f64]) -> f64 {
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .chunk_by(|x, y| x == y)
        .map(|g| {
            let t = g.len() as f64;
            t * t * t - t
        })
        .sum()
}
