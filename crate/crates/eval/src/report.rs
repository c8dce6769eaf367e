//! Per-method summaries and their CSV / JSON artifacts.
//!
//! The summary JSON carries no wall-clock values, so identical inputs give
//! byte-identical files; timings go to a separate CSV.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use comir::imaging::Point2D;
use comir::stats::spearman;
use comir_registration::Method;

use crate::error::{EvalError, Result};
use crate::intervals::clopper_pearson;
use crate::metrics::{ecdf, success_counts, FAILURE_THRESHOLD_PX};
use crate::protocol::PairRecord;
use crate::strata::{StrataCounts, Stratum};
use crate::timing::TimingRow;
use crate::wilcoxon::wilcoxon_signed_rank;

/// Stand-in error for failed registrations in rank-based statistics; any
/// value above every finite error gives the same ranks.
pub const FAILURE_RANK_VALUE: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSummary {
    pub label: String,
    pub bound_px: f64,
    pub count: usize,
    pub ci_lo: u64,
    pub ci_hi: u64,
    pub proportion_lo: f64,
    pub proportion_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub stratum: Stratum,
    pub n: usize,
    pub median_error: Option<f64>,
    pub thresholds: Vec<ThresholdSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    pub failures: usize,
    pub median_error: Option<f64>,
    pub thresholds: Vec<ThresholdSummary>,
    pub by_stratum: Vec<StratumSummary>,
    /// Spearman correlation of error with initial displacement.
    pub error_displacement_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Method,
    pub b: Method,
    pub n: usize,
    pub p_value: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub image_side: usize,
    pub pairs: usize,
    pub strata: StrataCounts,
    pub level: f64,
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

fn median(errors: &[f64]) -> Option<f64> {
    if errors.is_empty() {
        return None;
    }
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    let med = if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) };
    med.is_finite().then_some(med)
}

fn threshold_rows(errors: &[f64], side: usize, level: f64) -> Result<Vec<ThresholdSummary>> {
    let counts = success_counts(errors, side);
    if counts.n == 0 {
        return Ok(Vec::new());
    }
    counts
        .thresholds
        .into_iter()
        .map(|t| {
            let ci = clopper_pearson(t.count as u64, counts.n as u64, level)?;
            Ok(ThresholdSummary {
                label: t.label,
                bound_px: t.bound_px,
                count: t.count,
                ci_lo: ci.count_lo,
                ci_hi: ci.count_hi,
                proportion_lo: ci.proportion.lo,
                proportion_hi: ci.proportion.hi,
            })
        })
        .collect()
}

fn ranked_error(r: &PairRecord) -> f64 {
    r.error.unwrap_or(FAILURE_RANK_VALUE)
}

/// Summarizes records of any number of methods over one pair set.
pub fn summarize(records: &[PairRecord], side: usize, level: f64) -> Result<EvalSummary> {
    let mut by_method: BTreeMap<Method, Vec<&PairRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r);
    }
    let mut pair_strata: BTreeMap<&str, Stratum> = BTreeMap::new();
    for r in records {
        pair_strata.insert(&r.pair_id, r.stratum);
    }
    let mut strata = StrataCounts::default();
    for s in pair_strata.values() {
        match s {
            Stratum::Small => strata.small += 1,
            Stratum::Medium => strata.medium += 1,
            Stratum::Large => strata.large += 1,
        }
    }

    let mut methods = Vec::new();
    for (&method, rs) in &by_method {
        let errors: Vec<f64> = rs.iter().map(|r| r.error_or_inf()).collect();
        let by_stratum = Stratum::ALL
            .iter()
            .filter_map(|&s| {
                let e: Vec<f64> = rs.iter().filter(|r| r.stratum == s).map(|r| r.error_or_inf()).collect();
                (!e.is_empty()).then_some((s, e))
            })
            .map(|(stratum, e)| {
                Ok(StratumSummary {
                    stratum,
                    n: e.len(),
                    median_error: median(&e),
                    thresholds: threshold_rows(&e, side, level)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ranked: Vec<f64> = rs.iter().map(|r| ranked_error(r)).collect();
        let displacement: Vec<f64> = rs.iter().map(|r| r.displacement).collect();
        methods.push(MethodSummary {
            method,
            n: rs.len(),
            failures: rs.iter().filter(|r| r.error.is_none()).count(),
            median_error: median(&errors),
            thresholds: threshold_rows(&errors, side, level)?,
            by_stratum,
            error_displacement_spearman: spearman(&ranked, &displacement).ok(),
        });
    }

    let mut comparisons = Vec::new();
    let keys: Vec<Method> = by_method.keys().copied().collect();
    for (i, &a) in keys.iter().enumerate() {
        for &b in &keys[i + 1..] {
            let rb: BTreeMap<&str, f64> = by_method[&b].iter().map(|r| (r.pair_id.as_str(), ranked_error(r))).collect();
            let (ea, eb): (Vec<f64>, Vec<f64>) = by_method[&a]
                .iter()
                .filter_map(|r| rb.get(r.pair_id.as_str()).map(|&e| (ranked_error(r), e)))
                .unzip();
            let (p_value, note) = match wilcoxon_signed_rank(&ea, &eb) {
                Ok(t) => (Some(t.p_value), None),
                Err(e) => (None, Some(e.to_string())),
            };
            comparisons.push(Comparison {
                a,
                b,
                n: ea.len(),
                p_value,
                note,
            });
        }
    }

    Ok(EvalSummary {
        image_side: side,
        pairs: pair_strata.len(),
        strata,
        level,
        methods,
        comparisons,
    })
}

#[derive(Serialize)]
struct PairRow<'a> {
    pair_id: &'a str,
    method: Method,
    stratum: Stratum,
    displacement: f64,
    true_angle: f64,
    true_tx: f64,
    true_ty: f64,
    est_angle: Option<f64>,
    est_tx: Option<f64>,
    est_ty: Option<f64>,
    error: Option<f64>,
    objective: Option<f64>,
    iterations: usize,
    converged: bool,
    start_index: Option<usize>,
    seed: u64,
    failure: Option<&'a str>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    method: Method,
    scope: &'a str,
    n: usize,
    threshold: &'a str,
    bound_px: f64,
    count: usize,
    ci_lo: u64,
    ci_hi: u64,
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| EvalError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_pair_csv(path: &Path, records: &[PairRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        let center_t = r.truth.with_center(Point2D::new(0.0, 0.0));
        let est = r.estimate.map(|e| e.with_center(Point2D::new(0.0, 0.0)));
        w.serialize(PairRow {
            pair_id: &r.pair_id,
            method: r.method,
            stratum: r.stratum,
            displacement: r.displacement,
            true_angle: center_t.angle,
            true_tx: center_t.tx,
            true_ty: center_t.ty,
            est_angle: est.map(|e| e.angle),
            est_tx: est.map(|e| e.tx),
            est_ty: est.map(|e| e.ty),
            error: r.error,
            objective: r.objective,
            iterations: r.iterations,
            converged: r.converged,
            start_index: r.start_index,
            seed: r.seed,
            failure: r.failure.as_deref(),
        })?;
    }
    w.flush().map_err(|e| EvalError::io(path, e))
}

pub fn write_summary_csv(path: &Path, summary: &EvalSummary) -> Result<()> {
    let mut w = create(path)?;
    for m in &summary.methods {
        let scopes = std::iter::once(("all", m.n, &m.thresholds))
            .chain(m.by_stratum.iter().map(|s| (s.stratum.name(), s.n, &s.thresholds)));
        for (scope, n, rows) in scopes {
            for t in rows {
                w.serialize(SummaryRow {
                    method: m.method,
                    scope,
                    n,
                    threshold: &t.label,
                    bound_px: t.bound_px,
                    count: t.count,
                    ci_lo: t.ci_lo,
                    ci_hi: t.ci_hi,
                })?;
            }
        }
    }
    w.flush().map_err(|e| EvalError::io(path, e))
}

/// eCDF steps of one method as `error,fraction,relative_error` rows.
pub fn write_ecdf_csv(path: &Path, records: &[PairRecord], side: usize) -> Result<()> {
    let errors: Vec<f64> = records.iter().map(|r| r.error_or_inf()).collect();
    let curve = ecdf(&errors, FAILURE_THRESHOLD_PX)?.with_scale(side as f64);
    let mut w = create(path)?;
    w.write_record(["error", "fraction", "relative_error"])?;
    for (e, f) in curve.errors.iter().zip(&curve.fractions) {
        w.write_record([e.to_string(), f.to_string(), (e / side as f64).to_string()])?;
    }
    w.flush().map_err(|e| EvalError::io(path, e))
}

pub fn write_timing_csv(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["stage", "total_seconds", "images", "seconds_per_image"])?;
    for r in rows {
        w.write_record([
            r.stage.to_string(),
            r.total_seconds.to_string(),
            r.images.to_string(),
            r.seconds_per_image.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| EvalError::io(path, e))
}

pub fn summary_json(summary: &EvalSummary) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)? + "\n")
}

/// Writes `pairs.csv`, `summary.csv`, `summary.json` and one
/// `ecdf_<method>.csv` per method into `dir`; returns the written paths.
pub fn write_outputs(dir: &Path, records: &[PairRecord], summary: &EvalSummary) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let mut written = Vec::new();
    let pairs = dir.join("pairs.csv");
    write_pair_csv(&pairs, records)?;
    written.push(pairs);
    let table = dir.join("summary.csv");
    write_summary_csv(&table, summary)?;
    written.push(table);
    for m in &summary.methods {
        let mine: Vec<PairRecord> = records.iter().filter(|r| r.method == m.method).cloned().collect();
        let path = dir.join(format!("ecdf_{}.csv", m.method));
        write_ecdf_csv(&path, &mine, summary.image_side)?;
        written.push(path);
    }
    let json = dir.join("summary.json");
    fs::write(&json, summary_json(summary)?).map_err(|e| EvalError::io(&json, e))?;
    written.push(json);
    Ok(written)
}

/// Reads `*.json` record files (one array of [`PairRecord`] each) from a directory,
/// in file-name order.
pub fn read_records(dir: &Path) -> Result<Vec<PairRecord>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| EvalError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| EvalError::io(&f, e))?;
        let mut rs: Vec<PairRecord> = serde_json::from_str(&text)?;
        out.append(&mut rs);
    }
    Ok(out)
}
