//! End-to-end estimation pipeline: model fitting (outcome and selection
//! models), percentile scoring against the target cohort, weight
//! calibration, risk smoothing, and projection into accuracy reports for
//! every requested estimator. The cross-validation and resampling modules
//! reuse the staged helpers here rather than re-deriving them.

use ndarray::Array1;

use crate::accuracy::{
    self, assemble_report, AccuracyReport, Diagnostics, Method, RocPoint,
};
use crate::config::RunConfig;
use crate::cv;
use crate::data_model::{expand_basis, BasisExpansion, StudyData};
use crate::density_ratio::{
    calibrate_pi, calibrated_weights, fit_selection_model, Bandwidth, CalibratedWeights,
    PiCalibrator,
};
use crate::error::{Error, Result};
use crate::glm::{self, Coefficients};
use crate::risk::{build_risk_curve, h2_with_rate, RiskCurve};
use crate::scores::{percentile_scores, target_ecdf, PopulationTag};

/// Minimum labeled-source size for the estimation procedure. Constructors
/// accept smaller fixtures so unit tests can exercise mechanics; the
/// pipeline entry points enforce the statistical floor.
pub const MIN_LABELED: usize = 20;

/// The design expansions configured for the two working models.
pub fn expansions(config: &RunConfig) -> (BasisExpansion, BasisExpansion) {
    (
        BasisExpansion::interactions(&config.mu_interactions),
        BasisExpansion::interactions(&config.pi_interactions),
    )
}

/// Models fitted once per dataset: outcome coefficients β̂ on the labeled
/// source units, selection coefficients α̂ on the pooled unlabeled units, and
/// the two-dimensional propensity calibrator built from both.
#[derive(Debug)]
pub struct ModelFit {
    pub mu_view: StudyData,
    pub pi_view: StudyData,
    pub beta: Coefficients,
    pub alpha: Coefficients,
    pub calibrator: PiCalibrator,
}

/// Adaptive-lasso logistic fit of the outcome model on the labeled design.
pub fn fit_beta(x: &ndarray::Array2<f64>, y: &Array1<f64>) -> Result<Coefficients> {
    let w = Array1::<f64>::ones(y.len());
    let grid = glm::default_lambda_grid(x, y, &w, 1.0)?;
    glm::fit_adaptive_lasso(x, y, &w, 1.0, &grid)
}

pub fn fit_models(data: &StudyData, config: &RunConfig) -> Result<ModelFit> {
    config.validate()?;
    let (mu_exp, pi_exp) = expansions(config);
    let mu_view = expand_basis(data, &mu_exp)?;
    let pi_view = expand_basis(data, &pi_exp)?;
    let beta = fit_beta(mu_view.labeled_source(), mu_view.y())?;
    let alpha = fit_selection_model(data, &pi_exp, None)?;
    let calibrator = calibrate_pi(
        &alpha,
        &beta,
        &pi_view,
        &mu_view,
        (
            Bandwidth::PlugIn {
                scale: config.h1_scale,
            },
            Bandwidth::PlugIn {
                scale: config.h1_scale,
            },
        ),
        config.pi_min,
    )?;
    Ok(ModelFit {
        mu_view,
        pi_view,
        beta,
        alpha,
        calibrator,
    })
}

/// Percentile scores of the labeled and target cohorts under one set of
/// outcome coefficients, plus their exact lattice ranks (a percentile is
/// always a count over the N_t target scores, i.e. r/N_t for integer r).
#[derive(Debug, Clone)]
pub struct PercentileSet {
    pub labeled: Array1<f64>,
    pub target: Array1<f64>,
    pub labeled_ranks: Vec<usize>,
    pub target_ranks: Vec<usize>,
    pub n_t: usize,
}

pub fn percentiles_under(beta: &Coefficients, mu_view: &StudyData) -> Result<PercentileSet> {
    let ecdf = target_ecdf(beta, mu_view.target())?;
    let labeled = percentile_scores(
        beta,
        mu_view.labeled_source(),
        &ecdf,
        PopulationTag::LabeledSource,
    )?
    .percentile;
    let target =
        percentile_scores(beta, mu_view.target(), &ecdf, PopulationTag::Target)?.percentile;
    let n_t = mu_view.n_target();
    let rank = |p: f64| (p * n_t as f64).round() as usize;
    Ok(PercentileSet {
        labeled_ranks: labeled.iter().map(|&p| rank(p)).collect(),
        target_ranks: target.iter().map(|&p| rank(p)).collect(),
        labeled,
        target,
        n_t,
    })
}

/// Steps II and III for one (β, weights) pair: risk curve, imputed risks on
/// both cohorts, the exact cutoff grid, the projected ROC, and prevalence.
#[derive(Debug)]
pub struct SteamStage {
    pub percentiles: PercentileSet,
    pub h2: f64,
    pub risk: RiskCurve,
    pub m_labeled: Vec<f64>,
    pub m_target: Vec<f64>,
    pub cutoffs: Vec<f64>,
    pub roc: Vec<RocPoint>,
    pub prevalence: f64,
}

pub fn steam_stage(
    mu_view: &StudyData,
    beta: &Coefficients,
    weights: &Array1<f64>,
    config: &RunConfig,
) -> Result<SteamStage> {
    let percentiles = percentiles_under(beta, mu_view)?;
    steam_stage_from_percentiles(mu_view, percentiles, weights, config)
}

pub fn steam_stage_from_percentiles(
    mu_view: &StudyData,
    percentiles: PercentileSet,
    weights: &Array1<f64>,
    config: &RunConfig,
) -> Result<SteamStage> {
    let h2 = h2_with_rate(&percentiles.labeled, config.nu2)? * config.h2_scale;
    let risk = build_risk_curve(&percentiles.labeled, mu_view.y(), weights, h2)?;
    project_stage(mu_view, percentiles, risk, h2)
}

/// Step III alone: projects an already-built risk curve (possibly the pooled
/// cross-validated one) through the given percentile set.
pub fn project_stage(
    _mu_view: &StudyData,
    percentiles: PercentileSet,
    risk: RiskCurve,
    h2: f64,
) -> Result<SteamStage> {
    let lattice = risk.eval_lattice(percentiles.n_t);
    let m_labeled: Vec<f64> = percentiles
        .labeled_ranks
        .iter()
        .map(|&r| lattice[r])
        .collect();
    let m_target: Vec<f64> = percentiles
        .target_ranks
        .iter()
        .map(|&r| lattice[r])
        .collect();
    let cutoffs = accuracy::default_cutoff_grid(&percentiles.target);
    let roc = accuracy::steam_tpr_fpr_imputed(&percentiles.target, &m_target, &cutoffs)?;
    let prevalence = m_target.iter().sum::<f64>() / m_target.len() as f64;
    Ok(SteamStage {
        percentiles,
        h2,
        risk,
        m_labeled,
        m_target,
        cutoffs,
        roc,
        prevalence,
    })
}

/// Names of the scalar estimates reported per method, aligned with
/// `stage_scalars` output: AUC, prevalence, then (cutoff, TPR, PPV, NPV) per
/// FPR constraint.
pub fn scalar_names(u0_list: &[f64]) -> Vec<String> {
    let mut names = vec!["auc".to_string(), "prevalence".to_string()];
    for &u0 in u0_list {
        names.push(format!("cutoff@{u0}"));
        names.push(format!("tpr@{u0}"));
        names.push(format!("ppv@{u0}"));
        names.push(format!("npv@{u0}"));
    }
    names
}

/// The scalar estimates of one ROC grid + prevalence, in `scalar_names`
/// order.
pub fn roc_scalars(roc: &[RocPoint], prevalence: f64, u0_list: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 + 4 * u0_list.len());
    out.push(accuracy::steam_auc(roc)?);
    out.push(prevalence);
    for &u0 in u0_list {
        let (cutoff, tpr) = accuracy::roc_at_fpr(roc, u0)?;
        let (ppv, npv) = accuracy::steam_ppv_npv(tpr, u0, prevalence)?;
        out.push(cutoff);
        out.push(tpr);
        out.push(ppv);
        out.push(npv);
    }
    Ok(out)
}

/// A method that could not be estimated on this dataset (the others still
/// report).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MethodFailure {
    pub method: Method,
    pub message: String,
}

/// Point-estimate bundle for one dataset.
#[derive(Debug)]
pub struct Evaluation {
    pub fit: ModelFit,
    pub weights: CalibratedWeights,
    /// The in-sample (non-CV) stage; comparators are built from it, and it
    /// anchors the resampling procedures.
    pub stage: SteamStage,
    /// Cross-validated stage when `config.folds ≥ 2`.
    pub cv: Option<cv::CvOutput>,
    pub reports: Vec<AccuracyReport>,
    pub failures: Vec<MethodFailure>,
    pub warnings: Vec<String>,
}

impl Evaluation {
    pub fn report(&self, method: Method) -> Option<&AccuracyReport> {
        self.reports.iter().find(|r| r.method == method)
    }
}

/// Runs every configured estimator on one dataset. The STEAM report uses the
/// cross-validated risk smoother when folds ≥ 2 (the bias-corrected
/// estimator); comparators always use the in-sample components they are
/// defined with.
pub fn evaluate_all(data: &StudyData, config: &RunConfig) -> Result<Evaluation> {
    config.validate()?;
    if data.n() < MIN_LABELED {
        return Err(Error::InvalidInput(format!(
            "at least {MIN_LABELED} labeled source units required, got {}",
            data.n()
        )));
    }
    let mut warnings = Vec::new();
    let fit = fit_models(data, config)?;
    let weights = calibrated_weights(
        &fit.calibrator,
        fit.pi_view.labeled_source(),
        fit.mu_view.labeled_source(),
    )?;
    let stage = steam_stage(&fit.mu_view, &fit.beta, &weights.w, config)?;

    let cv_output = if config.folds >= 2 && config.methods.contains(&Method::Steam) {
        match cv::cv_pipeline(&fit, config) {
            Ok(out) => {
                warnings.extend(out.warnings.iter().cloned());
                Some(Ok(out))
            }
            Err(err) => Some(Err(err)),
        }
    } else {
        None
    };

    let y = fit.mu_view.y();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &method in &config.methods {
        let built: Result<Option<AccuracyReport>> = (|| match method {
            Method::Steam => {
                let (roc, prevalence, diag) = match &cv_output {
                    Some(Ok(out)) => (
                        out.stage.roc.clone(),
                        out.stage.prevalence,
                        Diagnostics {
                            clip_count: out.clip_count,
                            fallback_count: out.stage.risk.fallback_count(),
                        },
                    ),
                    Some(Err(err)) => {
                        return Err(Error::InvalidInput(format!(
                            "cross-validated estimation failed: {err}"
                        )))
                    }
                    None => (
                        stage.roc.clone(),
                        stage.prevalence,
                        Diagnostics {
                            clip_count: weights.clip_count,
                            fallback_count: stage.risk.fallback_count(),
                        },
                    ),
                };
                Ok(Some(assemble_report(
                    Method::Steam,
                    roc,
                    prevalence,
                    &config.u0,
                    diag,
                )?))
            }
            Method::Weighted => {
                let (roc, prevalence) = accuracy::comparator_weighted(
                    &stage.percentiles.labeled,
                    y,
                    &weights.w,
                    &stage.cutoffs,
                )?;
                Ok(Some(assemble_report(
                    Method::Weighted,
                    roc,
                    prevalence,
                    &config.u0,
                    Diagnostics {
                        clip_count: weights.clip_count,
                        fallback_count: 0,
                    },
                )?))
            }
            Method::DrAug => {
                let m_labeled = Array1::from_vec(stage.m_labeled.clone());
                let m_target = Array1::from_vec(stage.m_target.clone());
                let (roc, prevalence) = accuracy::comparator_dr_aug(
                    &stage.percentiles.labeled,
                    y,
                    &weights.w,
                    &m_labeled,
                    &stage.percentiles.target,
                    &m_target,
                    &stage.cutoffs,
                )?;
                Ok(Some(assemble_report(
                    Method::DrAug,
                    roc,
                    prevalence,
                    &config.u0,
                    Diagnostics {
                        clip_count: weights.clip_count,
                        fallback_count: stage.risk.fallback_count(),
                    },
                )?))
            }
            Method::Source => {
                let (percentiles, fold_warnings) = cv::cross_fitted_percentiles(&fit, config)?;
                warnings.extend(fold_warnings);
                let (roc, prevalence) = accuracy::empirical_roc(&percentiles, y, &stage.cutoffs)?;
                Ok(Some(assemble_report(
                    Method::Source,
                    roc,
                    prevalence,
                    &config.u0,
                    Diagnostics::default(),
                )?))
            }
            Method::TargetLabeled => {
                let Some(validation) = fit.mu_view.validation_labels() else {
                    warnings.push(
                        "target_labeled skipped: no validation labels in the target cohort"
                            .to_string(),
                    );
                    return Ok(None);
                };
                let vp = Array1::from_iter(
                    validation
                        .target_rows
                        .iter()
                        .map(|&r| stage.percentiles.target[r]),
                );
                let vy = Array1::from_vec(validation.y.clone());
                let (roc, prevalence) = accuracy::empirical_roc(&vp, &vy, &stage.cutoffs)?;
                Ok(Some(assemble_report(
                    Method::TargetLabeled,
                    roc,
                    prevalence,
                    &config.u0,
                    Diagnostics::default(),
                )?))
            }
        })();
        match built {
            Ok(Some(report)) => reports.push(report),
            Ok(None) => {}
            Err(err) => failures.push(MethodFailure {
                method,
                message: err.to_string(),
            }),
        }
    }

    Ok(Evaluation {
        fit,
        weights,
        stage,
        cv: cv_output.and_then(|r| r.ok()),
        reports,
        failures,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_dataset, SimScenario};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_config() -> RunConfig {
        RunConfig {
            folds: 0,
            draws: 0,
            ..RunConfig::default()
        }
    }

    fn small_dataset(seed: u64) -> StudyData {
        let scenario = SimScenario {
            n: 150,
            big_n: 800,
            n_t: 800,
            n_target_labeled: 60,
            seed,
            ..SimScenario::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        generate_dataset(&scenario, &mut rng).unwrap().data
    }

    #[test]
    fn evaluate_all_produces_requested_methods() {
        let data = small_dataset(11);
        let mut config = small_config();
        config.mu_interactions = vec![(1, 2), (2, 3), (3, 4)];
        config.pi_interactions = vec![(1, 2)];
        let eval = evaluate_all(&data, &config).unwrap();
        assert_eq!(eval.reports.len(), 5);
        for method in [
            Method::Source,
            Method::TargetLabeled,
            Method::Weighted,
            Method::DrAug,
            Method::Steam,
        ] {
            let report = eval.report(method).unwrap();
            assert!((0.0..=1.0).contains(&report.auc), "{method:?} auc");
            assert!(report.prevalence > 0.0 && report.prevalence < 1.0);
            assert_eq!(report.at_fpr.len(), 1);
        }
    }

    #[test]
    fn scalar_names_align_with_values() {
        let data = small_dataset(12);
        let config = small_config();
        let eval = evaluate_all(&data, &config).unwrap();
        let names = scalar_names(&config.u0);
        let values =
            roc_scalars(&eval.stage.roc, eval.stage.prevalence, &config.u0).unwrap();
        assert_eq!(names.len(), values.len());
        assert_eq!(names[0], "auc");
        assert_eq!(names[2], "cutoff@0.05");
        let steam = eval.report(Method::Steam).unwrap();
        assert_eq!(values[0], steam.auc);
        assert_eq!(values[2], steam.at_fpr[0].cutoff);
    }

    #[test]
    fn labeled_floor_enforced() {
        let data = small_dataset(13);
        // rebuild with only 12 labeled rows
        let lab = data
            .labeled_source()
            .slice(ndarray::s![..12, ..])
            .to_owned();
        let y = data.y().slice(ndarray::s![..12]).to_owned();
        let small = StudyData::new(
            lab,
            y,
            data.unlabeled_source().clone(),
            data.target().clone(),
            data.feature_names().to_vec(),
            None,
        )
        .unwrap();
        assert!(matches!(
            evaluate_all(&small, &small_config()),
            Err(Error::InvalidInput(_))
        ));
    }
}
