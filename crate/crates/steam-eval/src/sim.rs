//! Synthetic-population generator and Monte-Carlo harness: equicorrelated
//! Gaussian covariates, logistic outcome and selection mechanisms of three
//! shift strengths, misspecification wiring for the two working models,
//! oracle truths from large fresh target draws, and replicate experiments
//! summarized as bias / SE / RMSE tables plus equivalent-label curves.

use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accuracy::{self, AccuracyReport, Method};
use crate::config::{derived_rng, RunConfig};
use crate::data_model::{BasisExpansion, StudyData, ValidationLabels};
use crate::error::{Error, Result};
use crate::glm::{sigmoid, solve_spd};
use crate::inference;
use crate::pipeline;
use crate::scores::{percentile_scores, target_ecdf, PopulationTag};

/// RNG stream of the oracle-truth target draws (relative to the scenario
/// seed; streams 0 and 1 belong to fold assignment and perturbation).
const STREAM_ORACLE: u64 = 2;
/// Stream of the source-population draws behind the limiting coefficients.
const STREAM_ORACLE_FIT: u64 = 3;
/// Replicate r generates its dataset from stream `STREAM_REPLICATES + r`.
const STREAM_REPLICATES: u64 = 1 << 32;

/// How strongly the covariates drive selection into the source cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftStrength {
    Weak,
    Moderate,
    Strong,
}

/// Which working model is deprived of its interaction terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Misspec {
    BothCorrect,
    PiMis,
    MuMis,
}

/// One data-generating configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub p: usize,
    pub sigma2: f64,
    pub rho: f64,
    pub shift: ShiftStrength,
    pub misspec: Misspec,
    /// Labeled subset size of the source cohort.
    pub n: usize,
    /// Nominal source size; the pooled draw has `big_n + n_t` rows and the
    /// realized split follows the selection mechanism.
    pub big_n: usize,
    /// Nominal target size.
    pub n_t: usize,
    /// Quarantined validation labels drawn in the target cohort.
    pub n_target_labeled: usize,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            p: 10,
            sigma2: 1.0,
            rho: 0.2,
            shift: ShiftStrength::Moderate,
            misspec: Misspec::BothCorrect,
            n: 200,
            big_n: 10_000,
            n_t: 10_000,
            n_target_labeled: 100,
            seed: 0,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.p < 6 {
            return Err(Error::InvalidConfig(
                "the generating mechanisms read covariates 1 through 6".into(),
            ));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidConfig("sigma2 must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "equicorrelation {} outside [0, 1)",
                self.rho
            )));
        }
        if self.n == 0 || self.n > self.big_n {
            return Err(Error::InvalidConfig(format!(
                "labeled size {} must lie in 1..={}",
                self.n, self.big_n
            )));
        }
        if self.n_t == 0 {
            return Err(Error::InvalidConfig("target size must be positive".into()));
        }
        if self.n_target_labeled > self.n_t {
            return Err(Error::InvalidConfig(
                "cannot label more target units than the target holds".into(),
            ));
        }
        Ok(())
    }

    /// True outcome probability given the raw covariates.
    pub fn mu_true(&self, x: &[f64]) -> f64 {
        sigmoid(
            -0.25 + 0.8 * x[0] + 0.8 * x[1] + 0.4 * x[2] + 0.4 * x[3] + 0.2 * x[0] * x[1]
                - 0.1 * x[1] * x[2]
                + 0.2 * x[2] * x[3],
        )
    }

    /// True source-selection probability given the raw covariates.
    pub fn pi_true(&self, x: &[f64]) -> f64 {
        let (a, b, c) = match self.shift {
            ShiftStrength::Weak => (0.1, 0.05, 0.05),
            ShiftStrength::Moderate => (0.2, 0.1, 0.1),
            ShiftStrength::Strong => (0.6, 0.3, 0.3),
        };
        sigmoid(a * x[0] + b * x[1] - a * x[4] - b * x[5] + c * x[0] * x[1])
    }

    /// One covariate row: X = σ(√ρ·Z₀·1 + √(1−ρ)·Z), giving variance σ² and
    /// pairwise correlation ρ.
    fn draw_x(&self, rng: &mut ChaCha12Rng, out: &mut [f64]) {
        let sigma = self.sigma2.sqrt();
        let shared: f64 = StandardNormal.sample(rng);
        let (c0, c1) = (self.rho.sqrt(), (1.0 - self.rho).sqrt());
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = sigma * (c0 * shared + c1 * z);
        }
    }
}

/// Interaction pairs (1-based) of the two working designs under a
/// misspecification scenario: the deprived model fits the raw covariates.
pub fn scenario_pairs(misspec: Misspec) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mu = vec![(1, 2), (2, 3), (3, 4)];
    let pi = vec![(1, 2)];
    match misspec {
        Misspec::BothCorrect => (mu, pi),
        Misspec::PiMis => (mu, Vec::new()),
        Misspec::MuMis => (Vec::new(), pi),
    }
}

/// The same as `scenario_pairs`, packaged as basis expansions.
pub fn scenario_bases(misspec: Misspec) -> (BasisExpansion, BasisExpansion) {
    let (mu, pi) = scenario_pairs(misspec);
    (
        BasisExpansion::interactions(&mu),
        BasisExpansion::interactions(&pi),
    )
}

/// A run configuration wired for a scenario's working models.
pub fn scenario_config(scenario: &SimScenario, base: &RunConfig) -> RunConfig {
    let (mu, pi) = scenario_pairs(scenario.misspec);
    RunConfig {
        mu_interactions: mu,
        pi_interactions: pi,
        ..base.clone()
    }
}

/// A generated dataset together with the realized cohort sizes.
#[derive(Debug)]
pub struct GeneratedData {
    pub data: StudyData,
    pub realized_source: usize,
    pub realized_target: usize,
    pub attempts: usize,
}

/// Draws one study: pooled covariates, Bernoulli selection into source vs
/// target, a uniformly random labeled subset of the source, and quarantined
/// validation labels in the target. Redraws (up to 10 times) if a realized
/// cohort is too small to honor the scenario.
pub fn generate_dataset(scenario: &SimScenario, rng: &mut ChaCha12Rng) -> Result<GeneratedData> {
    scenario.validate()?;
    let p = scenario.p;
    let pooled = scenario.big_n + scenario.n_t;
    let mut row = vec![0.0f64; p];
    for attempt in 1..=10 {
        let mut x = Array2::<f64>::zeros((pooled, p));
        let mut s = vec![false; pooled];
        let mut n_source = 0usize;
        for i in 0..pooled {
            scenario.draw_x(rng, &mut row);
            let pi = scenario.pi_true(&row);
            let selected = rng.random::<f64>() < pi;
            s[i] = selected;
            n_source += usize::from(selected);
            x.row_mut(i).assign(&Array1::from(row.clone()));
        }
        let n_target = pooled - n_source;
        // the unlabeled source cohort must stay nonempty after labeling
        if n_source < scenario.n + 1 || n_target < scenario.n_target_labeled.max(1) {
            continue;
        }

        let mut source_rows: Vec<usize> = (0..pooled).filter(|&i| s[i]).collect();
        let target_rows: Vec<usize> = (0..pooled).filter(|&i| !s[i]).collect();
        source_rows.shuffle(rng);
        let (labeled_rows, unlabeled_rows) = source_rows.split_at(scenario.n);

        let with_intercept = |rows: &[usize]| {
            let mut m = Array2::<f64>::zeros((rows.len(), p + 1));
            for (k, &i) in rows.iter().enumerate() {
                m[[k, 0]] = 1.0;
                m.row_mut(k).slice_mut(ndarray::s![1..]).assign(&x.row(i));
            }
            m
        };
        let labeled = with_intercept(labeled_rows);
        let unlabeled = with_intercept(unlabeled_rows);
        let target = with_intercept(&target_rows);

        let y = Array1::from_iter(labeled_rows.iter().map(|&i| {
            let mu = scenario.mu_true(x.row(i).as_slice().unwrap());
            f64::from(rng.random::<f64>() < mu)
        }));

        let validation = if scenario.n_target_labeled > 0 {
            // row indices into the target matrix, in randomized order so any
            // prefix is itself a uniform subsample
            let mut order: Vec<usize> = (0..target_rows.len()).collect();
            order.shuffle(rng);
            order.truncate(scenario.n_target_labeled);
            let vy = order
                .iter()
                .map(|&r| {
                    let mu = scenario.mu_true(x.row(target_rows[r]).as_slice().unwrap());
                    f64::from(rng.random::<f64>() < mu)
                })
                .collect();
            Some(ValidationLabels {
                target_rows: order,
                y: vy,
            })
        } else {
            None
        };

        let names = (1..=p).map(|j| format!("x{j}")).collect();
        let data = StudyData::new(labeled, y, unlabeled, target, names, validation)?;
        return Ok(GeneratedData {
            data,
            realized_source: n_source,
            realized_target: n_target,
            attempts: attempt,
        });
    }
    Err(Error::InvalidInput(format!(
        "10 pooled draws of {} rows never realized {} source and {} target \
         units; the scenario is infeasible",
        pooled,
        scenario.n + 1,
        scenario.n_target_labeled.max(1)
    )))
}

/// The limiting outcome coefficients on the scenario's working design: the
/// generating coefficients when the design nests the truth, otherwise the
/// population logistic fit over the source distribution (computed on a large
/// fresh draw with the true conditional mean as response).
pub fn limiting_outcome_coefficients(scenario: &SimScenario) -> Result<Array1<f64>> {
    match scenario.misspec {
        Misspec::BothCorrect | Misspec::PiMis => {
            let mut beta = Array1::<f64>::zeros(scenario.p + 4);
            beta[0] = -0.25;
            beta[1] = 0.8;
            beta[2] = 0.8;
            beta[3] = 0.4;
            beta[4] = 0.4;
            let base = scenario.p + 1;
            beta[base] = 0.2; // X1·X2
            beta[base + 1] = -0.1; // X2·X3
            beta[base + 2] = 0.2; // X3·X4
            Ok(beta)
        }
        Misspec::MuMis => {
            let draws = 200_000usize;
            let mut rng = derived_rng(scenario.seed, STREAM_ORACLE_FIT);
            let mut x = Array2::<f64>::zeros((draws, scenario.p + 1));
            let mut mu = Array1::<f64>::zeros(draws);
            let mut row = vec![0.0f64; scenario.p];
            let mut filled = 0usize;
            while filled < draws {
                scenario.draw_x(&mut rng, &mut row);
                // source population: accept with the selection probability
                if rng.random::<f64>() < scenario.pi_true(&row) {
                    x[[filled, 0]] = 1.0;
                    for (j, &v) in row.iter().enumerate() {
                        x[[filled, j + 1]] = v;
                    }
                    mu[filled] = scenario.mu_true(&row);
                    filled += 1;
                }
            }
            newton_logistic(&x, &mu)
        }
    }
}

/// Unpenalized logistic regression by Newton iteration, accepting
/// fractional responses (the estimating equation only involves E[Y|X]).
fn newton_logistic(x: &Array2<f64>, y: &Array1<f64>) -> Result<Array1<f64>> {
    let (m, q) = x.dim();
    let mut beta = Array1::<f64>::zeros(q);
    let mut trace = Vec::new();
    for _ in 0..60 {
        let eta = x.dot(&beta);
        let p = eta.mapv(sigmoid);
        let resid = y - &p;
        let grad = x.t().dot(&resid) / m as f64;
        let w = p.mapv(|v| v * (1.0 - v));
        let xw = x * &w.view().insert_axis(Axis(1));
        let hess = x.t().dot(&xw) / m as f64;
        let step = solve_spd(hess, &grad).ok_or_else(|| {
            Error::InvalidInput(
                "singular information matrix in the limiting-coefficient fit".into(),
            )
        })?;
        let sup = step.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        beta += &step;
        if sup < 1e-10 {
            return Ok(beta);
        }
        trace.push(sup);
    }
    Err(Error::NonConvergence {
        iterations: 60,
        trace,
    })
}

/// Scores one raw covariate row under the limiting coefficients on the
/// scenario's working design.
fn limiting_score(scenario: &SimScenario, beta_bar: &Array1<f64>, x: &[f64]) -> f64 {
    let mut s = beta_bar[0];
    for (j, &v) in x.iter().enumerate() {
        s += beta_bar[j + 1] * v;
    }
    if !matches!(scenario.misspec, Misspec::MuMis) {
        let base = scenario.p + 1;
        s += beta_bar[base] * x[0] * x[1];
        s += beta_bar[base + 1] * x[1] * x[2];
        s += beta_bar[base + 2] * x[2] * x[3];
    }
    s
}

/// A large Monte-Carlo draw of the target population (rejection-sampled
/// against the selection mechanism) with the true conditional outcome mean
/// attached. Generated once per scenario; the true accuracy of any fitted
/// coefficient vector is then a deterministic function of this sample, so
/// every replicate of an experiment can be scored against the accuracy of
/// its own fitted classifier.
#[derive(Debug, Clone)]
pub struct OracleSample {
    scenario: SimScenario,
    /// Row-major `draws × p` covariate draws.
    x: Vec<f64>,
    mu: Vec<f64>,
    pub draws: usize,
    pub prevalence: f64,
}

impl OracleSample {
    pub fn generate(scenario: &SimScenario, draws: usize) -> Result<Self> {
        scenario.validate()?;
        if draws < 1000 {
            return Err(Error::InvalidConfig(
                "oracle truth needs at least 1000 draws".into(),
            ));
        }
        let mut rng = derived_rng(scenario.seed, STREAM_ORACLE);
        let mut x = Vec::with_capacity(draws * scenario.p);
        let mut mu = Vec::with_capacity(draws);
        let mut row = vec![0.0f64; scenario.p];
        while mu.len() < draws {
            scenario.draw_x(&mut rng, &mut row);
            // target population: accept with one minus the selection probability
            if rng.random::<f64>() >= scenario.pi_true(&row) {
                x.extend_from_slice(&row);
                mu.push(scenario.mu_true(&row));
            }
        }
        let prevalence = mu.iter().sum::<f64>() / draws as f64;
        Ok(Self {
            scenario: scenario.clone(),
            x,
            mu,
            draws,
            prevalence,
        })
    }

    /// True values of every reported scalar for the classifier given by a
    /// dense coefficient vector (intercept first, then main effects, then —
    /// unless the outcome model is deprived of them — the scenario's
    /// interaction columns), evaluated on this population.
    pub fn measures_for(&self, beta: &Array1<f64>, u0_list: &[f64]) -> Result<Vec<f64>> {
        let want = 1
            + self.scenario.p
            + if matches!(self.scenario.misspec, Misspec::MuMis) {
                0
            } else {
                3
            };
        if beta.len() != want {
            return Err(Error::InvalidInput(format!(
                "coefficient vector has {} entries, the scenario's outcome design has {want}",
                beta.len()
            )));
        }
        let raw: Vec<f64> = self
            .x
            .chunks_exact(self.scenario.p)
            .map(|row| limiting_score(&self.scenario, beta, row))
            .collect();
        let mut sorted = raw.clone();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let percentiles = Array1::from_iter(
            raw.iter()
                .map(|&v| sorted.partition_point(|&s| s <= v) as f64 / self.draws as f64),
        );
        let cutoffs = accuracy::default_cutoff_grid(&percentiles);
        let roc = accuracy::steam_tpr_fpr_imputed(&percentiles, &self.mu, &cutoffs)?;
        pipeline::roc_scalars(&roc, self.prevalence, u0_list)
    }
}

/// Oracle truth of every reported scalar, from a large fresh draw of the
/// target population scored by the limiting coefficients, with the true
/// conditional mean standing in for the outcome.
#[derive(Debug, Clone)]
pub struct OracleTruth {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub beta_bar: Array1<f64>,
    pub draws: usize,
}

impl OracleTruth {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

pub fn oracle_truth(
    scenario: &SimScenario,
    u0_list: &[f64],
    draws: usize,
) -> Result<OracleTruth> {
    let sample = OracleSample::generate(scenario, draws)?;
    let beta_bar = limiting_outcome_coefficients(scenario)?;
    let values = sample.measures_for(&beta_bar, u0_list)?;
    Ok(OracleTruth {
        names: pipeline::scalar_names(u0_list),
        values,
        beta_bar,
        draws,
    })
}

/// One cell of the experiment table (all values ×100). Bias is against each
/// replicate's own truth — the accuracy the replicate's fitted classifier
/// actually attains on the target population — SE is the spread of the
/// estimates themselves, and RMSE combines the two.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryCell {
    pub measure: String,
    pub method: Method,
    /// mean(estimate − replicate truth) × 100.
    pub bias: f64,
    /// SD of the estimates across replicates × 100.
    pub se: f64,
    /// √(bias² + se²).
    pub rmse: f64,
    pub n_fail: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub scenario: SimScenario,
    pub replicates: usize,
    pub truth_names: Vec<String>,
    /// Population values attained by the limiting-model classifier — a
    /// scenario-level reference point (per-replicate truths vary with each
    /// replicate's fit and are folded into the cells).
    pub truth: Vec<f64>,
    pub cells: Vec<SummaryCell>,
    /// Distinct failure messages encountered across replicates.
    pub failure_notes: Vec<String>,
}

impl ExperimentSummary {
    pub fn cell(&self, measure: &str, method: Method) -> Option<&SummaryCell> {
        self.cells
            .iter()
            .find(|c| c.measure == measure && c.method == method)
    }
}

impl fmt::Display for ExperimentSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>12} {:>14} {:>8} {:>8} {:>8} {:>7}",
            "measure", "method", "bias", "se", "rmse", "n_fail"
        )?;
        for c in &self.cells {
            writeln!(
                f,
                "{:>12} {:>14} {:>8.3} {:>8.3} {:>8.3} {:>7}",
                c.measure,
                c.method.name(),
                c.bias,
                c.se,
                c.rmse,
                c.n_fail
            )?;
        }
        Ok(())
    }
}

/// Bias, SE, and RMSE (each ×100) of replicate estimates paired with their
/// replicate-level truths: bias = mean(estimate − truth), SE = SD of the
/// estimates, RMSE = √(bias² + SE²).
pub fn summarize_paired(estimates: &[f64], truths: &[f64]) -> (f64, f64, f64) {
    assert_eq!(
        estimates.len(),
        truths.len(),
        "one truth per replicate estimate"
    );
    let r = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / r;
    let bias = estimates
        .iter()
        .zip(truths.iter())
        .map(|(e, t)| e - t)
        .sum::<f64>()
        / r;
    let var = if estimates.len() > 1 {
        estimates.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)
    } else {
        0.0
    };
    let (bias, se) = (bias * 100.0, var.sqrt() * 100.0);
    (bias, se, bias.hypot(se))
}

/// Bias, SE, and RMSE (each ×100) of replicate values around one fixed truth.
pub fn summarize_replicates(truth: f64, values: &[f64]) -> (f64, f64, f64) {
    summarize_paired(values, &vec![truth; values.len()])
}

/// The scalar estimates of one report, in `scalar_names` order.
pub fn report_scalars(report: &AccuracyReport) -> Vec<f64> {
    let mut v = vec![report.auc, report.prevalence];
    for op in &report.at_fpr {
        v.extend([op.cutoff, op.tpr, op.ppv, op.npv]);
    }
    v
}

/// Runs `replicates` generated datasets through every configured estimator
/// and tabulates bias / SE / RMSE. Each replicate is scored against the true
/// accuracy of its own fitted classifier, computed on one shared oracle draw
/// of the target population; the summary's `truth` field carries the
/// limiting-model values as a scenario-level reference. Replicates use
/// independent seeded RNG streams and reduce order-independently, so the
/// table is identical however many worker threads run it.
pub fn run_experiment(
    scenario: &SimScenario,
    base_config: &RunConfig,
    replicates: usize,
    oracle_draws: usize,
) -> Result<ExperimentSummary> {
    if replicates < 2 {
        return Err(Error::InvalidConfig(
            "an experiment needs at least 2 replicates".into(),
        ));
    }
    let sample = OracleSample::generate(scenario, oracle_draws)?;
    let beta_bar = limiting_outcome_coefficients(scenario)?;
    let limit_values = sample.measures_for(&beta_bar, &base_config.u0)?;
    let names = pipeline::scalar_names(&base_config.u0);
    let config = scenario_config(scenario, base_config);
    let methods = config.methods.clone();

    type RepResult = (
        Option<Vec<f64>>,
        Vec<(Method, std::result::Result<Vec<f64>, String>)>,
    );
    let outcomes: Vec<RepResult> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = derived_rng(scenario.seed, STREAM_REPLICATES + rep as u64);
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(rep as u64);
            let shared = (|| -> Result<RepResult> {
                let generated = generate_dataset(scenario, &mut rng)?;
                let eval = pipeline::evaluate_all(&generated.data, &cfg)?;
                let truth_r = sample.measures_for(&eval.fit.beta.values, &cfg.u0)?;
                Ok((
                    Some(truth_r),
                    methods
                        .iter()
                        .map(|&m| match eval.report(m) {
                            Some(r) => (m, Ok(report_scalars(r))),
                            None => (
                                m,
                                Err(eval
                                    .failures
                                    .iter()
                                    .find(|f| f.method == m)
                                    .map(|f| f.message.clone())
                                    .unwrap_or_else(|| "estimator skipped".to_string())),
                            ),
                        })
                        .collect(),
                ))
            })();
            match shared {
                Ok(per_method) => per_method,
                Err(err) => (
                    None,
                    methods.iter().map(|&m| (m, Err(err.to_string()))).collect(),
                ),
            }
        })
        .collect();

    let mut cells = Vec::new();
    let mut failure_notes: Vec<String> = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut truths: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut n_fail = 0usize;
        for (truth_r, per_method) in &outcomes {
            match (&per_method[mi].1, truth_r) {
                (Ok(scalars), Some(t)) => {
                    for (k, &v) in scalars.iter().enumerate() {
                        values[k].push(v);
                        truths[k].push(t[k]);
                    }
                }
                (Err(msg), _) => {
                    n_fail += 1;
                    let note = format!("{}: {msg}", method.name());
                    if !failure_notes.contains(&note) {
                        failure_notes.push(note);
                    }
                }
                (Ok(_), None) => unreachable!("a replicate with estimates always has truths"),
            }
        }
        for (k, name) in names.iter().enumerate() {
            if values[k].is_empty() {
                continue;
            }
            let (bias, se, rmse) = summarize_paired(&values[k], &truths[k]);
            cells.push(SummaryCell {
                measure: name.clone(),
                method,
                bias,
                se,
                rmse,
                n_fail,
            });
        }
    }

    Ok(ExperimentSummary {
        scenario: scenario.clone(),
        replicates,
        truth_names: names,
        truth: limit_values,
        cells,
        failure_notes,
    })
}

/// Writes an experiment table as CSV (`measure,method,bias,se,rmse,n_fail`).
pub fn write_summary_csv<W: std::io::Write>(
    summary: &ExperimentSummary,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["measure", "method", "bias", "se", "rmse", "n_fail"])?;
    for c in &summary.cells {
        w.write_record([
            c.measure.as_str(),
            c.method.name(),
            &format!("{:.6}", c.bias),
            &format!("{:.6}", c.se),
            &format!("{:.6}", c.rmse),
            &c.n_fail.to_string(),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// One scalar measure's inference calibration across replicates.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageCell {
    pub measure: String,
    /// Mean replicate-level truth (the accuracy each replicate's fitted
    /// classifier attains on the target population).
    pub truth: f64,
    /// Mean (reported point − replicate truth), ×100.
    pub bias: f64,
    /// SD of the reported points across replicates, ×100.
    pub empirical_se: f64,
    /// Mean resampling SE, ×100.
    pub mean_se: f64,
    /// Fraction of replicates whose interval contains the replicate truth.
    pub coverage: f64,
    pub n_fail: usize,
}

/// Calibration table of the resampling intervals.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageSummary {
    pub scenario: SimScenario,
    pub variant: inference::Variant,
    pub replicates: usize,
    pub cells: Vec<CoverageCell>,
    pub failure_notes: Vec<String>,
}

/// Runs replicated datasets through the full chain *including* resampling
/// inference, and checks the resampling SEs and intervals against the
/// replicate-to-replicate spread: a well-calibrated procedure has
/// `mean_se ≈ empirical_se` and `coverage ≈ level`. Reported points are the
/// cross-validated estimates when CV is configured; SEs and intervals come
/// from the draws.
pub fn run_coverage_experiment(
    scenario: &SimScenario,
    base_config: &RunConfig,
    replicates: usize,
    variant: inference::Variant,
    oracle_draws: usize,
) -> Result<CoverageSummary> {
    if replicates < 2 {
        return Err(Error::InvalidConfig(
            "a coverage experiment needs at least 2 replicates".into(),
        ));
    }
    let sample = OracleSample::generate(scenario, oracle_draws)?;
    let names = pipeline::scalar_names(&base_config.u0);
    let mut config = scenario_config(scenario, base_config);
    if !config.methods.contains(&Method::Steam) {
        config.methods.push(Method::Steam);
    }

    // per replicate and scalar: (point, resampling se, replicate truth, covered)
    type RepResult = std::result::Result<Vec<(f64, f64, f64, bool)>, String>;
    let outcomes: Vec<RepResult> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = derived_rng(scenario.seed, STREAM_REPLICATES + rep as u64);
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(rep as u64);
            (|| -> Result<Vec<(f64, f64, f64, bool)>> {
                let generated = generate_dataset(scenario, &mut rng)?;
                let eval = pipeline::evaluate_all(&generated.data, &cfg)?;
                let report = eval.report(Method::Steam).ok_or_else(|| {
                    Error::InvalidInput(
                        eval.failures
                            .iter()
                            .find(|f| f.method == Method::Steam)
                            .map(|f| f.message.clone())
                            .unwrap_or_else(|| "estimator skipped".to_string()),
                    )
                })?;
                let truth_r = sample.measures_for(&eval.fit.beta.values, &cfg.u0)?;
                let points = report_scalars(report);
                let draws = match variant {
                    inference::Variant::Exact => inference::perturb_exact(&eval, &cfg)?,
                    inference::Variant::Approx => inference::perturb_approx(&eval, &cfg)?,
                };
                let summaries = inference::summarize_draws(&draws, cfg.level)?;
                Ok(points
                    .iter()
                    .zip(summaries.iter())
                    .zip(truth_r.iter())
                    .map(|((&p, s), &t)| {
                        (p, s.se, t, s.ci_lower <= t && t <= s.ci_upper)
                    })
                    .collect())
            })()
            .map_err(|e| e.to_string())
        })
        .collect();

    let mut failure_notes = Vec::new();
    let mut n_fail = 0usize;
    let mut points: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut ses: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut truths: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut covered: Vec<usize> = vec![0; names.len()];
    for rep in &outcomes {
        match rep {
            Ok(rows) => {
                for (k, &(p, se, t, cov)) in rows.iter().enumerate() {
                    points[k].push(p);
                    ses[k].push(se);
                    truths[k].push(t);
                    covered[k] += cov as usize;
                }
            }
            Err(msg) => {
                n_fail += 1;
                if !failure_notes.contains(msg) {
                    failure_notes.push(msg.clone());
                }
            }
        }
    }
    let mut cells = Vec::new();
    for (k, name) in names.iter().enumerate() {
        if points[k].is_empty() {
            continue;
        }
        let (bias, se, _) = summarize_paired(&points[k], &truths[k]);
        let mean_se = 100.0 * ses[k].iter().sum::<f64>() / ses[k].len() as f64;
        cells.push(CoverageCell {
            measure: name.clone(),
            truth: truths[k].iter().sum::<f64>() / truths[k].len() as f64,
            bias,
            empirical_se: se,
            mean_se,
            coverage: covered[k] as f64 / points[k].len() as f64,
            n_fail,
        });
    }
    Ok(CoverageSummary {
        scenario: scenario.clone(),
        variant,
        replicates,
        cells,
        failure_notes,
    })
}

impl fmt::Display for CoverageSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7}",
            "measure", "truth", "bias", "emp_se", "mean_se", "covg", "n_fail"
        )?;
        for c in &self.cells {
            writeln!(
                f,
                "{:>12} {:>8.4} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>7}",
                c.measure, c.truth, c.bias, c.empirical_se, c.mean_se, c.coverage, c.n_fail
            )?;
        }
        Ok(())
    }
}

/// Writes a coverage table as CSV
/// (`measure,truth,bias,empirical_se,mean_se,coverage,n_fail`).
pub fn write_coverage_csv<W: std::io::Write>(
    summary: &CoverageSummary,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "measure",
        "truth",
        "bias",
        "empirical_se",
        "mean_se",
        "coverage",
        "n_fail",
    ])?;
    for c in &summary.cells {
        w.write_record([
            c.measure.as_str(),
            &format!("{:.6}", c.truth),
            &format!("{:.6}", c.bias),
            &format!("{:.6}", c.empirical_se),
            &format!("{:.6}", c.mean_se),
            &format!("{:.6}", c.coverage),
            &c.n_fail.to_string(),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// RMSE (×100) of the validation-labels estimator at each label budget,
/// simulated with nested label subsets so the whole curve shares one
/// replicate stream.
#[derive(Debug, Clone, Serialize)]
pub struct LabelCurve {
    pub sizes: Vec<usize>,
    pub measure_names: Vec<String>,
    /// `rmse[s][k]`: RMSE at `sizes[s]` for measure `k`; NaN when every
    /// replicate failed at that size.
    pub rmse: Vec<Vec<f64>>,
    pub n_fail: Vec<Vec<usize>>,
}

pub fn target_labeled_curve(
    scenario: &SimScenario,
    base_config: &RunConfig,
    label_grid: &[usize],
    replicates: usize,
    sample: &OracleSample,
) -> Result<LabelCurve> {
    if label_grid.is_empty() || label_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "label grid must be strictly ascending and nonempty".into(),
        ));
    }
    if label_grid[0] < 10 {
        return Err(Error::InvalidConfig(
            "smallest label budget must be at least 10".into(),
        ));
    }
    if replicates < 2 {
        return Err(Error::InvalidConfig(
            "an experiment needs at least 2 replicates".into(),
        ));
    }
    let max_m = *label_grid.last().unwrap();
    let scen = SimScenario {
        n_target_labeled: max_m,
        ..scenario.clone()
    };
    scen.validate()?;
    let config = scenario_config(&scen, base_config);
    let names = pipeline::scalar_names(&config.u0);

    type RepOut = (
        Option<Vec<f64>>,
        Vec<std::result::Result<Vec<f64>, String>>,
    );
    let per_rep: Vec<RepOut> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = derived_rng(scen.seed, STREAM_REPLICATES + rep as u64);
            let shared = (|| -> Result<RepOut> {
                let generated = generate_dataset(&scen, &mut rng)?;
                let data = crate::data_model::expand_basis(
                    &generated.data,
                    &BasisExpansion::interactions(&config.mu_interactions),
                )?;
                let beta = pipeline::fit_beta(data.labeled_source(), data.y())?;
                let truth_r = sample.measures_for(&beta.values, &config.u0)?;
                let ecdf = target_ecdf(&beta, data.target())?;
                let target_p =
                    percentile_scores(&beta, data.target(), &ecdf, PopulationTag::Target)?
                        .percentile;
                let validation = data.validation_labels().expect("labels were requested");
                let cutoffs = accuracy::default_cutoff_grid(&target_p);
                Ok((
                    Some(truth_r),
                    label_grid
                        .iter()
                        .map(|&m| {
                            let vp = Array1::from_iter(
                                validation.target_rows[..m].iter().map(|&r| target_p[r]),
                            );
                            let vy = Array1::from_vec(validation.y[..m].to_vec());
                            accuracy::empirical_roc(&vp, &vy, &cutoffs)
                                .and_then(|(roc, prev)| {
                                    pipeline::roc_scalars(&roc, prev, &config.u0)
                                })
                                .map_err(|e| e.to_string())
                        })
                        .collect(),
                ))
            })();
            match shared {
                Ok(v) => v,
                Err(err) => (
                    None,
                    label_grid.iter().map(|_| Err(err.to_string())).collect(),
                ),
            }
        })
        .collect();

    let mut rmse = Vec::with_capacity(label_grid.len());
    let mut n_fail = Vec::with_capacity(label_grid.len());
    for (si, _) in label_grid.iter().enumerate() {
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut truths: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut fails = vec![0usize; names.len()];
        for (truth_r, per_size) in &per_rep {
            match (&per_size[si], truth_r) {
                (Ok(scalars), Some(t)) => {
                    for (k, &v) in scalars.iter().enumerate() {
                        values[k].push(v);
                        truths[k].push(t[k]);
                    }
                }
                (Err(_), _) => fails.iter_mut().for_each(|f| *f += 1),
                (Ok(_), None) => unreachable!("a replicate with estimates always has truths"),
            }
        }
        let row: Vec<f64> = values
            .iter()
            .zip(truths.iter())
            .map(|(vals, ts)| {
                if vals.is_empty() {
                    f64::NAN
                } else {
                    summarize_paired(vals, ts).2
                }
            })
            .collect();
        rmse.push(row);
        n_fail.push(fails);
    }

    Ok(LabelCurve {
        sizes: label_grid.to_vec(),
        measure_names: names,
        rmse,
        n_fail,
    })
}

/// Pool-adjacent-violators fit of a nonincreasing sequence (least squares).
fn isotonic_nonincreasing(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, count); merging enforces nonincreasing block means
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let b = blocks[blocks.len() - 1];
            let a = blocks[blocks.len() - 2];
            if a.0 / a.1 as f64 >= b.0 / b.1 as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            last.0 += b.0;
            last.1 += b.1;
        }
    }
    let mut out = Vec::with_capacity(values.len());
    for (sum, count) in blocks {
        let mean = sum / count as f64;
        out.extend(std::iter::repeat_n(mean, count));
    }
    out
}

/// The label budget whose (isotonic-regularized) RMSE curve matches a given
/// estimator RMSE, by linear interpolation between grid sizes.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EquivalentLabels {
    pub labels: f64,
    /// The requested RMSE fell outside the achievable range and the nearest
    /// grid boundary was returned.
    pub at_boundary: bool,
}

pub fn equivalent_labels(
    sizes: &[usize],
    rmse: &[f64],
    estimator_rmse: f64,
) -> Result<EquivalentLabels> {
    if sizes.is_empty() || sizes.len() != rmse.len() {
        return Err(Error::InvalidInput(
            "one RMSE value per label budget required".into(),
        ));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("label budgets must ascend".into()));
    }
    if rmse.iter().any(|v| !v.is_finite()) || !estimator_rmse.is_finite() {
        return Err(Error::InvalidInput("RMSE values must be finite".into()));
    }
    let iso = isotonic_nonincreasing(rmse);
    let t = estimator_rmse;
    if t > iso[0] {
        return Ok(EquivalentLabels {
            labels: sizes[0] as f64,
            at_boundary: true,
        });
    }
    if t < *iso.last().unwrap() {
        return Ok(EquivalentLabels {
            labels: *sizes.last().unwrap() as f64,
            at_boundary: true,
        });
    }
    for j in 0..iso.len() - 1 {
        if iso[j] >= t && t >= iso[j + 1] {
            let span = iso[j] - iso[j + 1];
            let frac = if span > 0.0 { (iso[j] - t) / span } else { 0.0 };
            return Ok(EquivalentLabels {
                labels: sizes[j] as f64 + frac * (sizes[j + 1] - sizes[j]) as f64,
                at_boundary: false,
            });
        }
    }
    // single grid point with exact match
    Ok(EquivalentLabels {
        labels: sizes[0] as f64,
        at_boundary: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn independent_covariates_when_rho_zero() {
        let scenario = SimScenario {
            rho: 0.0,
            ..SimScenario::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let k = 100_000usize;
        let mut row = vec![0.0f64; scenario.p];
        let (mut s1, mut s2, mut s12, mut s11, mut s22) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..k {
            scenario.draw_x(&mut rng, &mut row);
            s1 += row[0];
            s2 += row[5];
            s12 += row[0] * row[5];
            s11 += row[0] * row[0];
            s22 += row[5] * row[5];
        }
        let kf = k as f64;
        let cov = s12 / kf - (s1 / kf) * (s2 / kf);
        let v1 = s11 / kf - (s1 / kf).powi(2);
        let v2 = s22 / kf - (s2 / kf).powi(2);
        assert!(cov.abs() < 0.02, "cov {cov}");
        assert!((v1 - 1.0).abs() < 0.03 && (v2 - 1.0).abs() < 0.03);
    }

    #[test]
    fn equicorrelation_matches_rho() {
        let scenario = SimScenario::default(); // rho = 0.2
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let k = 100_000usize;
        let mut row = vec![0.0f64; scenario.p];
        let (mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0);
        for _ in 0..k {
            scenario.draw_x(&mut rng, &mut row);
            s1 += row[2];
            s2 += row[7];
            s12 += row[2] * row[7];
        }
        let kf = k as f64;
        let cov = s12 / kf - (s1 / kf) * (s2 / kf);
        assert!((cov - 0.2).abs() < 0.02, "cov {cov}");
    }

    #[test]
    fn outcome_prevalence_near_forty_five_percent() {
        let scenario = SimScenario::default();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let k = 100_000usize;
        let mut row = vec![0.0f64; scenario.p];
        let mut sum = 0.0;
        for _ in 0..k {
            scenario.draw_x(&mut rng, &mut row);
            sum += scenario.mu_true(&row);
        }
        let prevalence = sum / k as f64;
        assert!(
            (prevalence - 0.45).abs() < 0.02,
            "prevalence {prevalence}"
        );
    }

    #[test]
    fn shift_strengths_order_the_selection_spread() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let k = 50_000usize;
        let mut spread = |shift: ShiftStrength| {
            let scenario = SimScenario {
                shift,
                ..SimScenario::default()
            };
            let mut row = vec![0.0f64; scenario.p];
            let mut acc = 0.0;
            for _ in 0..k {
                scenario.draw_x(&mut rng, &mut row);
                acc += (scenario.pi_true(&row) - 0.5).abs();
            }
            acc / k as f64
        };
        let weak = spread(ShiftStrength::Weak);
        let moderate = spread(ShiftStrength::Moderate);
        let strong = spread(ShiftStrength::Strong);
        assert!(weak < moderate && moderate < strong, "{weak} {moderate} {strong}");
    }

    #[test]
    fn scenario_wiring_deprives_the_right_model() {
        let (mu, pi) = scenario_pairs(Misspec::BothCorrect);
        assert_eq!(mu, vec![(1, 2), (2, 3), (3, 4)]);
        assert_eq!(pi, vec![(1, 2)]);
        let (mu, pi) = scenario_pairs(Misspec::PiMis);
        assert_eq!(mu.len(), 3);
        assert!(pi.is_empty());
        let (mu, pi) = scenario_pairs(Misspec::MuMis);
        assert!(mu.is_empty());
        assert_eq!(pi, vec![(1, 2)]);
        let (mu_exp, _) = scenario_bases(Misspec::BothCorrect);
        assert_eq!(mu_exp, BasisExpansion::interactions(&[(1, 2), (2, 3), (3, 4)]));
    }

    #[test]
    fn generated_dataset_has_requested_shape_and_is_seed_deterministic() {
        let scenario = SimScenario {
            n: 80,
            big_n: 500,
            n_t: 500,
            n_target_labeled: 40,
            ..SimScenario::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let g = generate_dataset(&scenario, &mut rng).unwrap();
        assert_eq!(g.data.n(), 80);
        assert_eq!(g.data.labeled_source().ncols(), 11);
        assert_eq!(g.realized_source + g.realized_target, 1000);
        assert_eq!(g.data.n_unlabeled(), g.realized_source - 80);
        assert_eq!(g.data.n_target(), g.realized_target);
        let v = g.data.validation_labels().unwrap();
        assert_eq!(v.target_rows.len(), 40);
        assert!(v.target_rows.iter().all(|&r| r < g.realized_target));
        assert!(v.y.iter().all(|&y| y == 0.0 || y == 1.0));

        let mut rng2 = ChaCha12Rng::seed_from_u64(9);
        let g2 = generate_dataset(&scenario, &mut rng2).unwrap();
        assert_eq!(g.data.y(), g2.data.y());
        assert_eq!(g.data.labeled_source(), g2.data.labeled_source());
        assert_eq!(g.data.target(), g2.data.target());
    }

    #[test]
    fn infeasible_scenario_errors_after_retries() {
        // 90 labeled units can never come out of ~50 realized source rows
        let scenario = SimScenario {
            n: 90,
            big_n: 90,
            n_t: 10,
            n_target_labeled: 0,
            ..SimScenario::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        assert!(matches!(
            generate_dataset(&scenario, &mut rng),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn limiting_coefficients_recover_truth_when_nested() {
        let scenario = SimScenario::default();
        let beta = limiting_outcome_coefficients(&scenario).unwrap();
        assert_eq!(beta.len(), 14);
        assert_eq!(beta[0], -0.25);
        assert_eq!(beta[1], 0.8);
        assert_eq!(beta[11], 0.2);
        assert_eq!(beta[12], -0.1);
    }

    #[test]
    fn misspecified_limit_shrinks_toward_main_effects() {
        let scenario = SimScenario {
            misspec: Misspec::MuMis,
            ..SimScenario::default()
        };
        let beta = limiting_outcome_coefficients(&scenario).unwrap();
        assert_eq!(beta.len(), 11);
        // main effects keep their order and sign
        assert!(beta[1] > 0.5 && beta[2] > 0.5);
        assert!(beta[3] > 0.15 && beta[4] > 0.15);
        assert!(beta[1] > beta[3]);
        // covariates outside the mechanism stay near zero
        for j in 7..=10 {
            assert!(beta[j].abs() < 0.05, "beta[{j}] = {}", beta[j]);
        }
    }

    #[test]
    fn oracle_truth_is_stable_across_independent_runs() {
        let scenario = SimScenario::default();
        let a = oracle_truth(&scenario, &[0.05], 300_000).unwrap();
        let b = oracle_truth(
            &SimScenario {
                seed: 999,
                ..scenario.clone()
            },
            &[0.05],
            300_000,
        )
        .unwrap();
        let auc_a = a.value("auc").unwrap();
        let auc_b = b.value("auc").unwrap();
        assert!((auc_a - auc_b).abs() < 0.002, "{auc_a} vs {auc_b}");
        assert!(auc_a > 0.7 && auc_a < 0.95, "auc {auc_a}");
        let prev = a.value("prevalence").unwrap();
        assert!((prev - 0.45).abs() < 0.03, "prevalence {prev}");
    }

    #[test]
    fn summary_moments_satisfy_the_rmse_identity() {
        let truth = 0.62;
        let values: Vec<f64> = (0..37)
            .map(|i| 0.6 + 0.01 * ((i * 7919 % 100) as f64 / 100.0 - 0.5))
            .collect();
        let (bias, se, rmse) = summarize_replicates(truth, &values);
        let lhs = rmse * rmse;
        let rhs = bias * bias + se * se;
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
        // paired truths shift the bias but leave the estimate spread alone
        let truths: Vec<f64> = values.iter().map(|v| v - 0.004).collect();
        let (pb, ps, pm) = summarize_paired(&values, &truths);
        assert!((pb - 0.4).abs() < 1e-9, "bias {pb}");
        assert!((ps - se).abs() < 1e-12, "se {ps} vs {se}");
        assert!((pm - pb.hypot(ps)).abs() < 1e-12);
        // oracle plug: constant estimates equal to the truth
        let exact = vec![truth; 25];
        let (b, s, m) = summarize_replicates(truth, &exact);
        assert!(b.abs() < 1e-12 && s.abs() < 1e-12 && m.abs() < 1e-12);
    }

    #[test]
    fn oracle_sample_scores_the_limiting_model_best() {
        let scenario = SimScenario {
            seed: 21,
            ..SimScenario::default()
        };
        let sample = OracleSample::generate(&scenario, 100_000).unwrap();
        let beta_bar = limiting_outcome_coefficients(&scenario).unwrap();
        let best = sample.measures_for(&beta_bar, &[0.05]).unwrap();
        let truth = oracle_truth(&scenario, &[0.05], 100_000).unwrap();
        // the wrapper reproduces the sample-level computation exactly
        for (a, b) in best.iter().zip(truth.values.iter()) {
            assert_eq!(a, b);
        }
        // under a correctly specified outcome model the limiting score is the
        // true risk ranking, so distorting it can only lower the AUC
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(77);
        for _ in 0..5 {
            let mut distorted = beta_bar.clone();
            for v in distorted.iter_mut().skip(1) {
                *v += 0.4 * (rng.random::<f64>() - 0.5);
            }
            let worse = sample.measures_for(&distorted, &[0.05]).unwrap();
            assert!(
                worse[0] <= best[0] + 1e-4,
                "distorted auc {} above limiting auc {}",
                worse[0],
                best[0]
            );
        }
        // a wrongly sized vector is rejected
        let short = Array1::zeros(3);
        assert!(sample.measures_for(&short, &[0.05]).is_err());
    }

    #[test]
    fn isotonic_fit_is_nonincreasing_and_idempotent() {
        let raw = vec![5.0, 5.5, 4.0, 4.2, 3.0, 3.4, 2.0];
        let iso = isotonic_nonincreasing(&raw);
        assert!(iso.windows(2).all(|w| w[0] >= w[1]), "{iso:?}");
        let again = isotonic_nonincreasing(&iso);
        for (a, b) in iso.iter().zip(again.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // total mass is preserved blockwise
        let sum_raw: f64 = raw.iter().sum();
        let sum_iso: f64 = iso.iter().sum();
        assert!((sum_raw - sum_iso).abs() < 1e-12);
    }

    #[test]
    fn equivalent_labels_interpolates_and_flags_boundaries() {
        let sizes = vec![50, 100, 150, 200];
        let rmse = vec![8.0, 6.0, 5.0, 4.5];
        // self-consistency at a grid point
        let hit = equivalent_labels(&sizes, &rmse, 6.0).unwrap();
        assert!((hit.labels - 100.0).abs() < 1e-12 && !hit.at_boundary);
        // midway between 100 and 150
        let mid = equivalent_labels(&sizes, &rmse, 5.5).unwrap();
        assert!((mid.labels - 125.0).abs() < 1e-12);
        // monotone: smaller RMSE needs more labels
        let better = equivalent_labels(&sizes, &rmse, 4.8).unwrap();
        assert!(better.labels > mid.labels);
        // boundaries
        let low = equivalent_labels(&sizes, &rmse, 9.0).unwrap();
        assert!(low.at_boundary && low.labels == 50.0);
        let high = equivalent_labels(&sizes, &rmse, 4.0).unwrap();
        assert!(high.at_boundary && high.labels == 200.0);
        // non-monotone input is regularized, not rejected
        let bumpy = vec![8.0, 5.8, 6.2, 4.5];
        let reg = equivalent_labels(&sizes, &bumpy, 6.0).unwrap();
        assert!(reg.labels >= 50.0 && reg.labels <= 200.0 && !reg.at_boundary);
    }

    #[test]
    fn coverage_experiment_reports_calibration_columns() {
        let scenario = SimScenario {
            n: 120,
            big_n: 600,
            n_t: 600,
            n_target_labeled: 0,
            seed: 9,
            ..SimScenario::default()
        };
        let config = RunConfig {
            folds: 2,
            draws: 110,
            methods: vec![Method::Steam],
            ..RunConfig::default()
        };
        let summary =
            run_coverage_experiment(&scenario, &config, 3, inference::Variant::Approx, 2000)
                .unwrap();
        assert_eq!(summary.replicates, 3);
        assert!(!summary.cells.is_empty());
        for c in &summary.cells {
            assert!((0.0..=1.0).contains(&c.coverage), "{}", c.coverage);
            assert!(c.mean_se > 0.0, "{}: mean_se {}", c.measure, c.mean_se);
            assert!(c.empirical_se.is_finite());
            assert_eq!(c.n_fail, 0, "notes: {:?}", summary.failure_notes);
        }
        let mut csv_bytes = Vec::new();
        write_coverage_csv(&summary, &mut csv_bytes).unwrap();
        let text = String::from_utf8(csv_bytes).unwrap();
        assert!(text.starts_with("measure,truth,bias,empirical_se,mean_se,coverage,n_fail"));
        assert_eq!(text.lines().count(), 1 + summary.cells.len());
    }
}
