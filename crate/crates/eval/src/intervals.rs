//! Exact binomial (Clopper-Pearson) intervals; the bootstrap lives in the core crate.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

pub use comir::stats::{bootstrap_ci, IntervalEstimate, IntervalMethod};

use crate::error::{EvalError, Result};

/// A proportion interval together with its count-scale bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountInterval {
    pub k: u64,
    pub n: u64,
    pub proportion: IntervalEstimate,
    pub count_lo: u64,
    pub count_hi: u64,
}

/// Exact interval from Beta quantiles: `lo = B⁻¹(α/2; k, n−k+1)`,
/// `hi = B⁻¹(1−α/2; k+1, n−k)`, with `lo = 0` at `k = 0` and `hi = 1` at `k = n`.
/// Count bounds are `n·lo` and `n·hi` rounded to the nearest integer.
pub fn clopper_pearson(k: u64, n: u64, level: f64) -> Result<CountInterval> {
    if n == 0 || k > n {
        return Err(EvalError::InvalidCounts { k, n });
    }
    if !(0.0 < level && level < 1.0) {
        return Err(EvalError::InvalidLevel(level));
    }
    let alpha = 1.0 - level;
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, kf, nf - kf + 1.0)
    };
    let hi = if k == n {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, kf + 1.0, nf - kf)
    };
    Ok(CountInterval {
        k,
        n,
        proportion: IntervalEstimate {
            point: kf / nf,
            lo,
            hi,
            method: IntervalMethod::ClopperPearson,
            level,
        },
        count_lo: (lo * nf).round() as u64,
        count_hi: (hi * nf).round() as u64,
    })
}

fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("positive shape parameters").inverse_cdf(p)
}
