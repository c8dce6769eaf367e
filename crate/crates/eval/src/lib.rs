//! Evaluation protocol for rigid registration.
//!
//! Ground-truth transforms are drawn at random (rotation, then translation)
//! and stratified by their mean corner displacement into small, medium and
//! large. Each method's estimate is scored by the mean corner distance to
//! the truth; results are reported as success counts at fixed pixel bounds
//! with exact binomial intervals, empirical CDFs, and paired signed-rank
//! comparisons between methods.

mod error;
mod intervals;
mod metrics;
mod protocol;
mod report;
mod strata;
mod timing;
mod wilcoxon;

pub use error::{EvalError, Result};
pub use intervals::{bootstrap_ci, clopper_pearson, CountInterval, IntervalEstimate, IntervalMethod};
pub use metrics::{
    ecdf, registration_error, success_bounds, success_counts, ECDFCurve, SuccessCounts, ThresholdCount,
    FAILURE_THRESHOLD_PX,
};
pub use protocol::{
    crop_pair, pair_seed, register_pair, register_pairs, required_margin, starts_for, synthetic_eval_pairs, EvalPair,
    PairRecord, PairSource,
};
pub use report::{
    read_records, summarize, summary_json, write_ecdf_csv, write_outputs, write_pair_csv, write_summary_csv,
    write_timing_csv, Comparison, EvalSummary, MethodSummary, StratumSummary, ThresholdSummary, FAILURE_RANK_VALUE,
};
pub use strata::{
    generate_eval_transforms, EvalProtocol, EvalTransform, SamplingRanges, StrataCounts, StrataThresholds, Stratum,
    PAPER_SIDE_PX,
};
pub use timing::{timing_report, Stage, TimingEntry, TimingRow};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonMethod, WilcoxonTest, EXACT_MAX_N, MIN_PAIRS};
