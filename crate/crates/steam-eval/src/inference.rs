//! Perturbation-resampling inference: every labeled unit's likelihood and
//! risk-smoother contribution is multiplied by a positive random weight with
//! unit mean and variance, the whole estimation chain is re-run per draw,
//! and the spread of the resampled scalars estimates the sampling
//! distribution of the point estimates. The exact variant re-runs the
//! two-dimensional propensity smoother per draw; the approximated variant
//! replaces it with a first-order expansion in the refitted outcome
//! coefficients.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derived_rng, RunConfig, STREAM_PERTURB};
use crate::density_ratio::calibrated_weights;
use crate::error::{Error, Result};
use crate::glm;
use crate::pipeline::{self, Evaluation};

/// Which propensity update runs inside each draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Exact,
    Approx,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Exact => "exact",
            Variant::Approx => "approx",
        }
    }
}

/// The resampled scalar estimates.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbationDraws {
    pub variant: Variant,
    /// Scalar names, aligned with `point` and each row of `draws`.
    pub names: Vec<String>,
    pub point: Vec<f64>,
    /// Successful draws only.
    pub draws: Vec<Vec<f64>>,
    /// Shared FPR grid on which every draw's ROC curve is evaluated for
    /// pointwise bands: the FPR values of the reported curve.
    pub band_fpr: Vec<f64>,
    /// Per successful draw (aligned with `draws`): TPR read off the draw's
    /// curve as a step function of FPR at each `band_fpr` value.
    pub band_tpr: Vec<Vec<f64>>,
    /// (draw index, reason) of each failed draw; `draws.len() +
    /// failures.len()` equals the requested count.
    pub failures: Vec<(usize, String)>,
    pub b: usize,
    pub seed: u64,
}

/// Independent multipliers distributed as 4·Beta(0.5, 1.5): nonnegative with
/// mean one and variance one, supported on [0, 4].
pub fn draw_perturbation_weights<R: Rng>(count: usize, rng: &mut R) -> Array1<f64> {
    let beta = Beta::new(0.5, 1.5).expect("valid shape parameters");
    Array1::from_iter((0..count).map(|_| 4.0 * beta.sample(rng)))
}

/// The B×n multiplier matrix, pregenerated from its own seed stream so the
/// exact and approximated variants consume identical draws.
pub fn multiplier_matrix(b: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = derived_rng(seed, STREAM_PERTURB);
    let beta = Beta::new(0.5, 1.5).expect("valid shape parameters");
    Array2::from_shape_fn((b, n), |_| 4.0 * beta.sample(&mut rng))
}

pub fn perturb_exact(eval: &Evaluation, config: &RunConfig) -> Result<PerturbationDraws> {
    let g = multiplier_matrix(config.draws, eval.fit.mu_view.n(), config.seed);
    perturb_with_multipliers(eval, config, Variant::Exact, &g)
}

pub fn perturb_approx(eval: &Evaluation, config: &RunConfig) -> Result<PerturbationDraws> {
    let g = multiplier_matrix(config.draws, eval.fit.mu_view.n(), config.seed);
    perturb_with_multipliers(eval, config, Variant::Approx, &g)
}

/// Runs the resampling loop over the rows of a given multiplier matrix.
/// Draws map in parallel; results reduce in draw order, so the output is
/// identical however many worker threads run it.
pub fn perturb_with_multipliers(
    eval: &Evaluation,
    config: &RunConfig,
    variant: Variant,
    g: &Array2<f64>,
) -> Result<PerturbationDraws> {
    config.validate()?;
    let fit = &eval.fit;
    let n = fit.mu_view.n();
    let b = g.nrows();
    if g.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "multiplier matrix has {} columns for {n} labeled units",
            g.ncols()
        )));
    }
    if b == 0 {
        return Err(Error::InvalidInput("at least one draw required".into()));
    }
    let x = fit.mu_view.labeled_source();
    let y = fit.mu_view.y();
    let pi_lab = fit.pi_view.labeled_source();
    let point = pipeline::roc_scalars(&eval.stage.roc, eval.stage.prevalence, &config.u0)?;

    // band grid: FPR values of the curve the report carries (the
    // cross-validated one when it exists), so band rows align with it
    let reported_roc = eval
        .report(crate::accuracy::Method::Steam)
        .map(|r| r.roc_grid.as_slice())
        .unwrap_or(&eval.stage.roc);
    let mut band_fpr: Vec<f64> = reported_roc.iter().map(|p| p.fpr).collect();
    band_fpr.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    band_fpr.dedup();

    // first-order ingredients of the approximated variant, computed once:
    // unclipped point propensities and their gradient in the outcome
    // coefficients (rows with a degenerate smoothing denominator carry a
    // zero gradient and a clipped fallback value, so they stay frozen).
    let linearization = match variant {
        Variant::Exact => None,
        Variant::Approx => {
            let grad = fit.calibrator.grad_beta(pi_lab, x)?;
            let base = Array1::from_iter((0..n).map(|i| {
                fit.calibrator
                    .pi_raw_at(pi_lab.row(i), x.row(i))
                    .unwrap_or_else(|| fit.calibrator.pi_at(pi_lab.row(i), x.row(i)))
            }));
            Some((base, grad))
        }
    };
    let pi_min = fit.calibrator.pi_min();

    let outcomes: Vec<std::result::Result<(Vec<f64>, Vec<f64>), String>> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let g_row = g.row(bi).to_owned();
            (|| -> Result<(Vec<f64>, Vec<f64>)> {
                let beta_star = glm::fit_adaptive_lasso_fixed(
                    x,
                    y,
                    &g_row,
                    fit.beta.gamma,
                    fit.beta.lambda,
                    &fit.beta,
                )?;
                let w_star = match &linearization {
                    None => {
                        let recal = fit.calibrator.recalibrated(&beta_star)?;
                        calibrated_weights(&recal, pi_lab, x)?.w
                    }
                    Some((base, grad)) => {
                        let delta = &beta_star.values - &fit.beta.values;
                        let shift = grad.dot(&delta);
                        Array1::from_iter(base.iter().zip(shift.iter()).map(|(&p0, &dp)| {
                            let pi = (p0 + dp).clamp(pi_min, 1.0 - pi_min);
                            (1.0 - pi) / pi
                        }))
                    }
                };
                let weights = &w_star * &g_row;
                let stage = pipeline::steam_stage(&fit.mu_view, &beta_star, &weights, config)?;
                let scalars = pipeline::roc_scalars(&stage.roc, stage.prevalence, &config.u0)?;
                let band = crate::accuracy::tpr_step_at_fpr(&stage.roc, &band_fpr)?;
                Ok((scalars, band))
            })()
            .map_err(|e| e.to_string())
        })
        .collect();

    let mut draws = Vec::with_capacity(b);
    let mut band_tpr = Vec::with_capacity(b);
    let mut failures = Vec::new();
    for (bi, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok((v, band)) => {
                draws.push(v);
                band_tpr.push(band);
            }
            Err(msg) => failures.push((bi, msg)),
        }
    }
    if failures.len() * 20 > b {
        return Err(Error::TooManyFailedDraws {
            failed: failures.len(),
            total: b,
        });
    }
    Ok(PerturbationDraws {
        variant,
        names: pipeline::scalar_names(&config.u0),
        point,
        draws,
        band_fpr,
        band_tpr,
        failures,
        b,
        seed: config.seed,
    })
}

/// Standard error and percentile confidence interval of one scalar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub name: String,
    pub point: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// Empirical quantile with linearly interpolated order statistics.
fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
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

/// SE (sample SD across successful draws) and central percentile interval at
/// the given confidence level, per scalar.
pub fn summarize_draws(draws: &PerturbationDraws, level: f64) -> Result<Vec<ScalarSummary>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level {level} outside (0, 1)"
        )));
    }
    let b_ok = draws.draws.len();
    if b_ok < 100 {
        return Err(Error::InvalidInput(format!(
            "interval summaries need at least 100 successful draws, got {b_ok}"
        )));
    }
    let alpha = (1.0 - level) / 2.0;
    let mut out = Vec::with_capacity(draws.names.len());
    for (k, name) in draws.names.iter().enumerate() {
        let mut col: Vec<f64> = draws.draws.iter().map(|row| row[k]).collect();
        let mean = col.iter().sum::<f64>() / b_ok as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b_ok - 1) as f64;
        col.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(ScalarSummary {
            name: name.clone(),
            point: draws.point[k],
            se: var.sqrt(),
            ci_lower: interpolated_quantile(&col, alpha),
            ci_upper: interpolated_quantile(&col, 1.0 - alpha),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_dataset, SimScenario};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn toy_evaluation(seed: u64) -> (Evaluation, RunConfig) {
        let scenario = SimScenario {
            n: 120,
            big_n: 600,
            n_t: 600,
            n_target_labeled: 0,
            seed,
            ..SimScenario::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = generate_dataset(&scenario, &mut rng).unwrap().data;
        let config = RunConfig {
            folds: 0,
            draws: 8,
            methods: vec![crate::accuracy::Method::Steam],
            ..RunConfig::default()
        };
        let eval = pipeline::evaluate_all(&data, &config).unwrap();
        (eval, config)
    }

    #[test]
    fn multiplier_moments_and_support() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let g = draw_perturbation_weights(1_000_000, &mut rng);
        let n = g.len() as f64;
        let mean = g.sum() / n;
        let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
        assert!(g.iter().all(|&v| (0.0..=4.0).contains(&v)));
    }

    #[test]
    fn matrix_is_seeded_and_variant_independent() {
        let a = multiplier_matrix(4, 7, 11);
        let b = multiplier_matrix(4, 7, 11);
        assert_eq!(a, b);
        let c = multiplier_matrix(4, 7, 12);
        assert_ne!(a, c);
    }

    #[test]
    fn unit_multipliers_reproduce_the_point_estimate() {
        let (eval, config) = toy_evaluation(21);
        let g = Array2::<f64>::ones((3, eval.fit.mu_view.n()));
        for variant in [Variant::Exact, Variant::Approx] {
            let out = perturb_with_multipliers(&eval, &config, variant, &g).unwrap();
            assert!(out.failures.is_empty());
            assert_eq!(out.draws.len(), 3);
            for draw in &out.draws {
                for (d, p) in draw.iter().zip(out.point.iter()) {
                    assert!(
                        (d - p).abs() < 1e-8,
                        "{variant:?}: draw {d} vs point {p}"
                    );
                }
            }
        }
    }

    #[test]
    fn variants_share_draws_and_disperse() {
        let (eval, config) = toy_evaluation(22);
        let g = multiplier_matrix(12, eval.fit.mu_view.n(), config.seed);
        let exact = perturb_with_multipliers(&eval, &config, Variant::Exact, &g).unwrap();
        let approx = perturb_with_multipliers(&eval, &config, Variant::Approx, &g).unwrap();
        assert_eq!(exact.names, approx.names);
        assert_eq!(exact.draws.len(), approx.draws.len());
        // the resampled AUCs move, and the two variants track each other
        // far more closely than the resampling noise itself
        let auc_exact: Vec<f64> = exact.draws.iter().map(|d| d[0]).collect();
        let auc_approx: Vec<f64> = approx.draws.iter().map(|d| d[0]).collect();
        let spread = auc_exact
            .iter()
            .map(|v| (v - exact.point[0]).abs())
            .fold(0.0f64, f64::max);
        assert!(spread > 1e-6, "no dispersion: {spread}");
        let max_gap = auc_exact
            .iter()
            .zip(auc_approx.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_gap < spread, "gap {max_gap} vs spread {spread}");
    }

    #[test]
    fn rerun_is_bitwise_identical() {
        let (eval, config) = toy_evaluation(23);
        let a = perturb_exact(&eval, &config).unwrap();
        let b = perturb_exact(&eval, &config).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.failures.len(), b.failures.len());
    }

    #[test]
    fn failed_draws_are_recorded_and_capped() {
        let (eval, config) = toy_evaluation(24);
        let n = eval.fit.mu_view.n();
        // one zeroed multiplier row makes that draw unestimable (1/20 ≤ 5%)
        let mut g = multiplier_matrix(20, n, config.seed);
        g.row_mut(7).fill(0.0);
        let out = perturb_with_multipliers(&eval, &config, Variant::Exact, &g).unwrap();
        assert_eq!(out.draws.len() + out.failures.len(), 20);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0, 7);

        // four zeroed rows out of 20 exceed the 5% budget
        let mut g = multiplier_matrix(20, n, config.seed);
        for r in [2, 5, 11, 17] {
            g.row_mut(r).fill(0.0);
        }
        let err = perturb_with_multipliers(&eval, &config, Variant::Exact, &g).unwrap_err();
        assert!(matches!(
            err,
            Error::TooManyFailedDraws {
                failed: 4,
                total: 20
            }
        ));
    }

    #[test]
    fn summaries_match_normal_quantiles() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let draws = PerturbationDraws {
            variant: Variant::Approx,
            names: vec!["z".into()],
            point: vec![0.0],
            draws: (0..100_000).map(|_| vec![normal.sample(&mut rng)]).collect(),
            band_fpr: vec![],
            band_tpr: vec![],
            failures: vec![],
            b: 100_000,
            seed: 3,
        };
        let s = &summarize_draws(&draws, 0.95).unwrap()[0];
        assert!((s.se - 1.0).abs() < 0.02, "se {}", s.se);
        assert!((s.ci_lower + 1.96).abs() < 0.02, "lower {}", s.ci_lower);
        assert!((s.ci_upper - 1.96).abs() < 0.02, "upper {}", s.ci_upper);
    }

    #[test]
    fn summaries_handle_constants_and_permutations() {
        let rows: Vec<Vec<f64>> = (0..150).map(|_| vec![0.7]).collect();
        let draws = PerturbationDraws {
            variant: Variant::Exact,
            names: vec!["c".into()],
            point: vec![0.7],
            draws: rows,
            band_fpr: vec![],
            band_tpr: vec![],
            failures: vec![],
            b: 150,
            seed: 0,
        };
        let s = &summarize_draws(&draws, 0.9).unwrap()[0];
        assert!(s.se < 1e-12, "se {}", s.se);
        assert_eq!(s.ci_lower, 0.7);
        assert_eq!(s.ci_upper, 0.7);

        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let mut rows: Vec<Vec<f64>> = (0..200)
            .map(|i| vec![(i as f64 * 0.37).sin()])
            .collect();
        let base = PerturbationDraws {
            variant: Variant::Exact,
            names: vec!["v".into()],
            point: vec![0.0],
            draws: rows.clone(),
            band_fpr: vec![],
            band_tpr: vec![],
            failures: vec![],
            b: 200,
            seed: 0,
        };
        let before = &summarize_draws(&base, 0.95).unwrap()[0];
        use rand::seq::SliceRandom;
        rows.shuffle(&mut rng);
        let shuffled = PerturbationDraws {
            draws: rows,
            ..base.clone()
        };
        let after = &summarize_draws(&shuffled, 0.95).unwrap()[0];
        assert!((before.se - after.se).abs() < 1e-12);
        assert!((before.ci_lower - after.ci_lower).abs() < 1e-12);
        assert!((before.ci_upper - after.ci_upper).abs() < 1e-12);
    }

    #[test]
    fn too_few_draws_refuse_summaries() {
        let draws = PerturbationDraws {
            variant: Variant::Exact,
            names: vec!["x".into()],
            point: vec![0.0],
            draws: (0..99).map(|_| vec![0.0]).collect(),
            band_fpr: vec![],
            band_tpr: vec![],
            failures: vec![],
            b: 99,
            seed: 0,
        };
        assert!(matches!(
            summarize_draws(&draws, 0.95),
            Err(Error::InvalidInput(_))
        ));
    }
}
