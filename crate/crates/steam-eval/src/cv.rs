//! K-fold cross-validation correction of the risk smoother: each labeled
//! unit's (percentile, weight, outcome) triple is computed under outcome
//! coefficients fitted without that unit, the held-out triples are pooled
//! into one risk curve, and the projection onto the target cohort still uses
//! the full-data coefficients. Also provides cross-fitted percentiles for
//! the naive source-sample comparator.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use crate::config::{derived_rng, RunConfig, STREAM_FOLDS};
use crate::density_ratio::calibrated_weights;
use crate::error::{Error, Result};
use crate::glm::Coefficients;
use crate::pipeline::{self, ModelFit, SteamStage};
use crate::risk::{build_risk_curve, h2_with_rate};
use crate::scores::{percentile_scores, target_ecdf, PopulationTag};

/// A seeded partition of the labeled source units into folds, stratified by
/// outcome so folds mirror the prevalence (and single-class folds only occur
/// when a class has fewer members than folds).
#[derive(Debug, Clone)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold index (0..k) per labeled-source unit.
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn new(k: usize, y: &Array1<f64>, seed: u64) -> Result<Self> {
        let n = y.len();
        if k < 2 {
            return Err(Error::InvalidConfig(format!(
                "cross-validation needs at least 2 folds, got {k}"
            )));
        }
        if k * 10 > n {
            return Err(Error::InvalidConfig(format!(
                "{k} folds over {n} labeled units leave fewer than 10 held-out \
                 units per fold"
            )));
        }
        let mut rng = derived_rng(seed, STREAM_FOLDS);
        let mut pos: Vec<usize> = (0..n).filter(|&i| y[i] == 1.0).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| y[i] == 0.0).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        // Round-robin within each class; the counter continues across the
        // class boundary so total fold sizes also differ by at most one.
        let mut assignments = vec![0usize; n];
        for (slot, &i) in pos.iter().chain(neg.iter()).enumerate() {
            assignments[i] = slot % k;
        }
        Ok(Self {
            k,
            assignments,
            seed,
        })
    }

    /// (training rows, held-out rows) of one fold, in unit order.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut rows_in = Vec::new();
        let mut rows_out = Vec::new();
        for (i, &f) in self.assignments.iter().enumerate() {
            if f == fold {
                rows_out.push(i);
            } else {
                rows_in.push(i);
            }
        }
        (rows_in, rows_out)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Output of the cross-validated pipeline.
#[derive(Debug)]
pub struct CvOutput {
    pub plan: FoldPlan,
    /// Projection of the pooled held-out risk curve through the full-data
    /// percentile scores.
    pub stage: SteamStage,
    /// Held-out percentile per labeled unit (unit order). Units of failed
    /// folds carry NaN and are excluded from the pooled smoother.
    pub held_out_percentiles: Vec<f64>,
    pub held_out_weights: Vec<f64>,
    pub included: Vec<bool>,
    /// Propensity clips accumulated over the per-fold recalibrations.
    pub clip_count: usize,
    pub warnings: Vec<String>,
}

/// Signature of the per-fold outcome fitter: (fold index, training design,
/// training outcomes). Tests inject recorders or forced coefficients here.
pub type FoldFitter<'a> =
    dyn FnMut(usize, &Array2<f64>, &Array1<f64>) -> Result<Coefficients> + 'a;

pub fn cv_pipeline(fit: &ModelFit, config: &RunConfig) -> Result<CvOutput> {
    let plan = FoldPlan::new(config.folds, fit.mu_view.y(), config.seed)?;
    cv_pipeline_with_plan(fit, plan, config, &mut |_, x, y| pipeline::fit_beta(x, y))
}

pub fn cv_pipeline_with_plan(
    fit: &ModelFit,
    plan: FoldPlan,
    config: &RunConfig,
    fit_fold: &mut FoldFitter,
) -> Result<CvOutput> {
    let mu_lab = fit.mu_view.labeled_source();
    let pi_lab = fit.pi_view.labeled_source();
    let y = fit.mu_view.y();
    let n = fit.mu_view.n();
    if plan.assignments.len() != n {
        return Err(Error::InvalidInput(
            "fold plan does not cover the labeled cohort".into(),
        ));
    }

    let mut held_out_percentiles = vec![f64::NAN; n];
    let mut held_out_weights = vec![f64::NAN; n];
    let mut included = vec![false; n];
    let mut clip_count = 0usize;
    let mut warnings = Vec::new();

    for fold in 0..plan.k {
        let (rows_in, rows_out) = plan.split(fold);
        let x_in = mu_lab.select(Axis(0), &rows_in);
        let y_in = y.select(Axis(0), &rows_in);
        let fold_result = (|| -> Result<()> {
            let beta_k = fit_fold(fold, &x_in, &y_in)?;
            let ecdf_k = target_ecdf(&beta_k, fit.mu_view.target())?;
            let mu_out = mu_lab.select(Axis(0), &rows_out);
            let scores = percentile_scores(
                &beta_k,
                &mu_out,
                &ecdf_k,
                PopulationTag::LabeledSource,
            )?;
            let recal = fit.calibrator.recalibrated(&beta_k)?;
            let pi_out = pi_lab.select(Axis(0), &rows_out);
            let weights = calibrated_weights(&recal, &pi_out, &mu_out)?;
            clip_count += weights.clip_count;
            for (j, &i) in rows_out.iter().enumerate() {
                held_out_percentiles[i] = scores.percentile[j];
                held_out_weights[i] = weights.w[j];
                included[i] = true;
            }
            Ok(())
        })();
        if let Err(err) = fold_result {
            warnings.push(format!(
                "fold {fold} skipped ({} held-out units dropped from the \
                 cross-validated smoother): {err}",
                rows_out.len()
            ));
        }
    }

    let kept: Vec<usize> = (0..n).filter(|&i| included[i]).collect();
    if kept.is_empty() {
        return Err(Error::InvalidInput(format!(
            "all {} cross-validation folds failed; no held-out triples to \
             pool ({})",
            plan.k,
            warnings.join("; ")
        )));
    }
    let pooled_p = Array1::from_iter(kept.iter().map(|&i| held_out_percentiles[i]));
    let pooled_w = Array1::from_iter(kept.iter().map(|&i| held_out_weights[i]));
    let pooled_y = y.select(Axis(0), &kept);

    let h2 = h2_with_rate(&pooled_p, config.nu2)? * config.h2_scale;
    let risk = build_risk_curve(&pooled_p, &pooled_y, &pooled_w, h2)?;
    let percentiles = pipeline::percentiles_under(&fit.beta, &fit.mu_view)?;
    let stage = pipeline::project_stage(&fit.mu_view, percentiles, risk, h2)?;

    Ok(CvOutput {
        plan,
        stage,
        held_out_percentiles,
        held_out_weights,
        included,
        clip_count,
        warnings,
    })
}

/// Percentile scores for the source comparator: each labeled unit is scored
/// under coefficients fitted with its fold held out (so the naive comparator
/// is not additionally flattered by in-sample optimism). With folds
/// disabled, falls back to full-data coefficients and says so.
pub fn cross_fitted_percentiles(
    fit: &ModelFit,
    config: &RunConfig,
) -> Result<(Array1<f64>, Vec<String>)> {
    let full = pipeline::percentiles_under(&fit.beta, &fit.mu_view)?;
    if config.folds < 2 {
        return Ok((
            full.labeled,
            vec!["source comparator scored in-sample (cross-fitting needs folds ≥ 2)".into()],
        ));
    }
    let mu_lab = fit.mu_view.labeled_source();
    let y = fit.mu_view.y();
    let plan = FoldPlan::new(config.folds, y, config.seed)?;
    let mut out = full.labeled.clone();
    let mut warnings = Vec::new();
    for fold in 0..plan.k {
        let (rows_in, rows_out) = plan.split(fold);
        let x_in = mu_lab.select(Axis(0), &rows_in);
        let y_in = y.select(Axis(0), &rows_in);
        let fold_result = (|| -> Result<()> {
            let beta_k = pipeline::fit_beta(&x_in, &y_in)?;
            let ecdf_k = target_ecdf(&beta_k, fit.mu_view.target())?;
            let mu_out = mu_lab.select(Axis(0), &rows_out);
            let scores = percentile_scores(
                &beta_k,
                &mu_out,
                &ecdf_k,
                PopulationTag::LabeledSource,
            )?;
            for (j, &i) in rows_out.iter().enumerate() {
                out[i] = scores.percentile[j];
            }
            Ok(())
        })();
        if let Err(err) = fold_result {
            warnings.push(format!(
                "source comparator fold {fold} kept full-data scores: {err}"
            ));
        }
    }
    Ok((out, warnings))
}
