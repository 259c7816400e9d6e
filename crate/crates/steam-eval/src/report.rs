//! Run artifacts: a versioned JSON report bundling every estimator's point
//! estimates, resampling standard errors and confidence intervals,
//! diagnostics, and the fully resolved configuration; plus a flat ROC CSV
//! with optional pointwise confidence-band columns. Both artifacts are
//! byte-deterministic under a fixed seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accuracy::Method;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::inference::{summarize_draws, PerturbationDraws, ScalarSummary, Variant};
use crate::pipeline::{Evaluation, MethodFailure};
use crate::sim::report_scalars;

pub const SCHEMA_VERSION: u32 = 1;

/// One vertex of a pointwise ROC confidence band.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BandPoint {
    pub fpr: f64,
    pub tpr_lower: f64,
    pub tpr_upper: f64,
}

/// Resampling inference attached to one estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceBlock {
    pub variant: Variant,
    pub level: f64,
    pub draws_requested: usize,
    pub draws_failed: usize,
    /// Per-scalar point / SE / CI. Points are the reported estimates (the
    /// cross-validated ones when CV ran); SEs and intervals come from the
    /// resampling distribution.
    pub scalars: Vec<ScalarSummary>,
    /// Pointwise TPR band on the reported curve's FPR grid.
    pub band: Vec<BandPoint>,
}

/// One estimator's results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodBlock {
    pub method: Method,
    pub report: crate::accuracy::AccuracyReport,
    pub inference: Option<InferenceBlock>,
}

/// The full JSON report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub schema_version: u32,
    pub config: RunConfig,
    pub methods: Vec<MethodBlock>,
    pub failures: Vec<MethodFailure>,
    pub warnings: Vec<String>,
}

impl Artifact {
    pub fn method(&self, method: Method) -> Option<&MethodBlock> {
        self.methods.iter().find(|b| b.method == method)
    }
}

/// Pointwise percentile band across draws, one vertex per shared FPR value.
pub fn summarize_band(draws: &PerturbationDraws, level: f64) -> Result<Vec<BandPoint>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let b_ok = draws.band_tpr.len();
    if b_ok < 100 {
        return Err(Error::InvalidInput(format!(
            "pointwise bands need at least 100 successful draws, got {b_ok}"
        )));
    }
    let alpha = (1.0 - level) / 2.0;
    let mut out = Vec::with_capacity(draws.band_fpr.len());
    let mut col = vec![0.0f64; b_ok];
    for (j, &fpr) in draws.band_fpr.iter().enumerate() {
        for (d, row) in draws.band_tpr.iter().enumerate() {
            col[d] = row[j];
        }
        col.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(BandPoint {
            fpr,
            tpr_lower: quantile_sorted(&col, alpha),
            tpr_upper: quantile_sorted(&col, 1.0 - alpha),
        });
    }
    Ok(out)
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Assembles the JSON report from an evaluation and (optionally) its
/// resampling draws. Draw summaries attach to the estimator the resampling
/// chain perturbs; their point column is overwritten with the reported
/// estimates so readers see one consistent set of numbers.
pub fn build_artifact(
    eval: &Evaluation,
    config: &RunConfig,
    perturbation: Option<&PerturbationDraws>,
) -> Result<Artifact> {
    let mut methods = Vec::new();
    for &m in &config.methods {
        let Some(report) = eval.report(m) else {
            continue;
        };
        let inference = match (m, perturbation) {
            (Method::Steam, Some(draws)) => {
                let mut scalars = summarize_draws(draws, config.level)?;
                let reported = report_scalars(report);
                if reported.len() != scalars.len() {
                    return Err(Error::InvalidInput(format!(
                        "scalar count mismatch: report has {}, draws have {}",
                        reported.len(),
                        scalars.len()
                    )));
                }
                for (s, &p) in scalars.iter_mut().zip(reported.iter()) {
                    s.point = p;
                }
                Some(InferenceBlock {
                    variant: draws.variant,
                    level: config.level,
                    draws_requested: draws.b,
                    draws_failed: draws.failures.len(),
                    scalars,
                    band: summarize_band(draws, config.level)?,
                })
            }
            _ => None,
        };
        methods.push(MethodBlock {
            method: m,
            report: report.clone(),
            inference,
        });
    }
    Ok(Artifact {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        methods,
        failures: eval.failures.clone(),
        warnings: eval.warnings.clone(),
    })
}

/// Pretty-printed JSON with a trailing newline. Field order follows the
/// struct declarations and floats print in shortest round-trip form, so
/// equal inputs give equal bytes.
pub fn write_report_json(artifact: &Artifact, path: &Path) -> Result<()> {
    let mut out = serde_json::to_string_pretty(artifact)?;
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_report_json(path: &Path) -> Result<Artifact> {
    let text = std::fs::read_to_string(path)?;
    let artifact: Artifact = serde_json::from_str(&text)?;
    if artifact.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported report schema version {} (this build reads {})",
            artifact.schema_version, SCHEMA_VERSION
        )));
    }
    Ok(artifact)
}

/// Flat ROC table: one row per (method, cutoff); confidence-band columns are
/// filled on rows of the estimator that carries an inference block and left
/// empty elsewhere. The first line is a `#` comment embedding the resolved
/// configuration for auditability.
pub fn write_roc_csv(artifact: &Artifact, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# config: {}", serde_json::to_string(&artifact.config)?)?;
    writeln!(w, "method,cutoff,fpr,tpr,tpr_lower,tpr_upper")?;
    for block in &artifact.methods {
        let band = block.inference.as_ref().map(|inf| &inf.band);
        for p in &block.report.roc_grid {
            let (lo, hi) = match band {
                Some(band) => match band_at(band, p.fpr) {
                    Some(bp) => (format!("{}", bp.tpr_lower), format!("{}", bp.tpr_upper)),
                    None => (String::new(), String::new()),
                },
                None => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{},{},{},{},{lo},{hi}",
                block.method.name(),
                p.cutoff,
                p.fpr,
                p.tpr
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The band vertex at this exact FPR (vertices are sorted by FPR).
fn band_at(band: &[BandPoint], fpr: f64) -> Option<&BandPoint> {
    let k = band.partition_point(|bp| bp.fpr < fpr);
    band.get(k).filter(|bp| bp.fpr == fpr)
}
