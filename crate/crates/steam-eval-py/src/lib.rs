//! Python bindings: study containers, the evaluation pipeline, resampling
//! inference, and the simulation harness, exposed as plain Python classes
//! and functions. Matrices cross the boundary as lists of row lists; results
//! come back as native floats, tuples, dicts, and JSON strings.

use ndarray::{Array1, Array2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use steam_eval::accuracy::Method;
use steam_eval::config::RunConfig;
use steam_eval::data_model::{load_study_csv, save_study_csv, CsvSchema, StudyData, ValidationLabels};
use steam_eval::inference::{
    perturb_approx, perturb_exact, summarize_draws, PerturbationDraws, ScalarSummary, Variant,
};
use steam_eval::pipeline::{evaluate_all, Evaluation};
use steam_eval::report::{build_artifact, summarize_band, BandPoint};
use steam_eval::sim::{
    generate_dataset, run_experiment, ExperimentSummary, Misspec, ShiftStrength, SimScenario,
};

fn to_py(e: steam_eval::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_method(s: &str) -> PyResult<Method> {
    match s {
        "source" => Ok(Method::Source),
        "target_labeled" => Ok(Method::TargetLabeled),
        "weighted" => Ok(Method::Weighted),
        "dr_aug" => Ok(Method::DrAug),
        "steam" => Ok(Method::Steam),
        other => Err(PyValueError::new_err(format!(
            "unknown method '{other}' (expected one of: source, target_labeled, weighted, \
             dr_aug, steam)"
        ))),
    }
}

fn parse_methods(methods: Option<Vec<String>>) -> PyResult<Vec<Method>> {
    match methods {
        None => Ok(vec![
            Method::Source,
            Method::TargetLabeled,
            Method::Weighted,
            Method::DrAug,
            Method::Steam,
        ]),
        Some(names) => names.iter().map(|s| parse_method(s)).collect(),
    }
}

fn parse_shift(s: &str) -> PyResult<ShiftStrength> {
    match s {
        "weak" => Ok(ShiftStrength::Weak),
        "moderate" => Ok(ShiftStrength::Moderate),
        "strong" => Ok(ShiftStrength::Strong),
        other => Err(PyValueError::new_err(format!(
            "unknown shift '{other}' (expected weak, moderate, strong)"
        ))),
    }
}

fn parse_misspec(s: &str) -> PyResult<Misspec> {
    match s {
        "both_correct" => Ok(Misspec::BothCorrect),
        "pi_mis" => Ok(Misspec::PiMis),
        "mu_mis" => Ok(Misspec::MuMis),
        other => Err(PyValueError::new_err(format!(
            "unknown misspecification '{other}' (expected both_correct, pi_mis, mu_mis)"
        ))),
    }
}

/// Covariate rows (no intercept column) to a design matrix with a leading
/// intercept column, validating rectangularity.
fn design_matrix(rows: &[Vec<f64>], what: &str) -> PyResult<Array2<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!(
            "{what} needs at least one row"
        )));
    }
    let p = rows[0].len();
    if p == 0 {
        return Err(PyValueError::new_err(format!(
            "{what} rows need at least one covariate"
        )));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != p) {
        return Err(PyValueError::new_err(format!(
            "{what} row {bad} has {} values, expected {p}",
            rows[bad].len()
        )));
    }
    let mut m = Array2::<f64>::zeros((rows.len(), p + 1));
    for (i, row) in rows.iter().enumerate() {
        m[[i, 0]] = 1.0;
        for (j, &v) in row.iter().enumerate() {
            m[[i, j + 1]] = v;
        }
    }
    Ok(m)
}

fn strip_intercept(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows()
        .into_iter()
        .map(|r| r.iter().skip(1).copied().collect())
        .collect()
}

/// One study: a labeled source cohort, an unlabeled source cohort, an
/// unlabeled target cohort, and (optionally) quarantined validation labels
/// on target rows. Covariates are passed as rows without intercept columns.
#[pyclass]
struct Study {
    data: StudyData,
}

#[pymethods]
impl Study {
    #[new]
    #[pyo3(signature = (labeled_x, y, unlabeled_x, target_x, *, feature_names=None,
                        validation_rows=None, validation_y=None))]
    fn new(
        labeled_x: Vec<Vec<f64>>,
        y: Vec<f64>,
        unlabeled_x: Vec<Vec<f64>>,
        target_x: Vec<Vec<f64>>,
        feature_names: Option<Vec<String>>,
        validation_rows: Option<Vec<usize>>,
        validation_y: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let labeled = design_matrix(&labeled_x, "labeled_x")?;
        let unlabeled = design_matrix(&unlabeled_x, "unlabeled_x")?;
        let target = design_matrix(&target_x, "target_x")?;
        let p = labeled.ncols() - 1;
        let names = feature_names
            .unwrap_or_else(|| (1..=p).map(|j| format!("x{j}")).collect());
        let validation = match (validation_rows, validation_y) {
            (None, None) => None,
            (Some(rows), Some(vy)) => Some(ValidationLabels {
                target_rows: rows,
                y: vy,
            }),
            _ => {
                return Err(PyValueError::new_err(
                    "validation_rows and validation_y must be given together",
                ))
            }
        };
        let data = StudyData::new(labeled, Array1::from(y), unlabeled, target, names, validation)
            .map_err(to_py)?;
        Ok(Self { data })
    }

    /// Loads a study from the evaluate-workflow CSV layout (role columns
    /// `s`, `labeled`, `y` plus covariate columns).
    #[staticmethod]
    #[pyo3(signature = (path, *, s_col="s", label_col="labeled", y_col="y", features=None))]
    fn from_csv(
        path: &str,
        s_col: &str,
        label_col: &str,
        y_col: &str,
        features: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let schema = CsvSchema {
            s_col: s_col.into(),
            label_col: label_col.into(),
            y_col: y_col.into(),
            feature_cols: features,
        };
        let data = load_study_csv(std::path::Path::new(path), &schema).map_err(to_py)?;
        Ok(Self { data })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        save_study_csv(&self.data, std::path::Path::new(path)).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.data.n()
    }

    #[getter]
    fn n_unlabeled(&self) -> usize {
        self.data.n_unlabeled()
    }

    #[getter]
    fn n_target(&self) -> usize {
        self.data.n_target()
    }

    #[getter]
    fn n_validation(&self) -> usize {
        self.data
            .validation_labels()
            .map_or(0, |v| v.target_rows.len())
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.data.feature_names().to_vec()
    }

    /// Labeled-source covariate rows (no intercept), for round-trip checks.
    #[getter]
    fn labeled_x(&self) -> Vec<Vec<f64>> {
        strip_intercept(self.data.labeled_source())
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.data.y().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "Study(n={}, n_unlabeled={}, n_target={}, n_validation={}, p={})",
            self.data.n(),
            self.data.n_unlabeled(),
            self.data.n_target(),
            self.n_validation(),
            self.data.feature_names().len()
        )
    }
}

/// Resampling inference for the main estimator: scalar summaries and a
/// pointwise ROC band.
#[pyclass]
struct InferenceResult {
    draws: PerturbationDraws,
    scalars: Vec<ScalarSummary>,
    band: Vec<BandPoint>,
    level: f64,
}

#[pymethods]
impl InferenceResult {
    #[getter]
    fn variant(&self) -> &'static str {
        self.draws.variant.name()
    }

    #[getter]
    fn level(&self) -> f64 {
        self.level
    }

    #[getter]
    fn draws_requested(&self) -> usize {
        self.draws.b
    }

    #[getter]
    fn draws_failed(&self) -> usize {
        self.draws.failures.len()
    }

    /// One dict per accuracy measure: name, point, se, ci_lower, ci_upper.
    fn scalars<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.scalars
            .iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("name", &s.name)?;
                d.set_item("point", s.point)?;
                d.set_item("se", s.se)?;
                d.set_item("ci_lower", s.ci_lower)?;
                d.set_item("ci_upper", s.ci_upper)?;
                Ok(d)
            })
            .collect()
    }

    /// Pointwise ROC band as (fpr, tpr_lower, tpr_upper) tuples.
    fn band(&self) -> Vec<(f64, f64, f64)> {
        self.band
            .iter()
            .map(|b| (b.fpr, b.tpr_lower, b.tpr_upper))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "InferenceResult(variant={}, draws={}, failed={}, level={})",
            self.draws.variant.name(),
            self.draws.b,
            self.draws.failures.len(),
            self.level
        )
    }
}

/// Fitted evaluation of one study: per-estimator accuracy reports plus
/// access to resampling inference and the JSON artifact.
#[pyclass]
struct EvaluationResult {
    eval: Evaluation,
    config: RunConfig,
}

impl EvaluationResult {
    fn report(&self, method: &str) -> PyResult<&steam_eval::accuracy::AccuracyReport> {
        let m = parse_method(method)?;
        self.eval.report(m).ok_or_else(|| {
            PyValueError::new_err(format!(
                "no report for '{method}' (available: {})",
                self.eval
                    .reports
                    .iter()
                    .map(|r| r.method.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })
    }
}

#[pymethods]
impl EvaluationResult {
    /// Estimators that produced a report.
    fn methods(&self) -> Vec<&'static str> {
        self.eval.reports.iter().map(|r| r.method.name()).collect()
    }

    #[pyo3(signature = (method="steam"))]
    fn auc(&self, method: &str) -> PyResult<f64> {
        Ok(self.report(method)?.auc)
    }

    #[pyo3(signature = (method="steam"))]
    fn prevalence(&self, method: &str) -> PyResult<f64> {
        Ok(self.report(method)?.prevalence)
    }

    /// ROC grid as (cutoff, fpr, tpr) tuples, ascending in cutoff.
    #[pyo3(signature = (method="steam"))]
    fn roc(&self, method: &str) -> PyResult<Vec<(f64, f64, f64)>> {
        Ok(self
            .report(method)?
            .roc_grid
            .iter()
            .map(|p| (p.cutoff, p.fpr, p.tpr))
            .collect())
    }

    /// One dict per requested FPR constraint: u0, cutoff, tpr, ppv, npv.
    #[pyo3(signature = (method="steam"))]
    fn operating_points<'py>(
        &self,
        py: Python<'py>,
        method: &str,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.report(method)?
            .at_fpr
            .iter()
            .map(|op| {
                let d = PyDict::new(py);
                d.set_item("u0", op.u0)?;
                d.set_item("cutoff", op.cutoff)?;
                d.set_item("tpr", op.tpr)?;
                d.set_item("ppv", op.ppv)?;
                d.set_item("npv", op.npv)?;
                Ok(d)
            })
            .collect()
    }

    #[getter]
    fn used_cv(&self) -> bool {
        self.eval.cv.is_some()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.eval.warnings.clone()
    }

    /// Estimators that were requested but failed, as (method, message).
    #[getter]
    fn failures(&self) -> Vec<(String, String)> {
        self.eval
            .failures
            .iter()
            .map(|f| (f.method.name().to_string(), f.message.clone()))
            .collect()
    }

    /// Runs perturbation resampling for the main estimator and summarizes
    /// it at the configured (or overridden) draw count and level.
    #[pyo3(signature = (*, variant="approx", draws=None, level=None, seed=None))]
    fn perturb(
        &self,
        py: Python<'_>,
        variant: &str,
        draws: Option<usize>,
        level: Option<f64>,
        seed: Option<u64>,
    ) -> PyResult<InferenceResult> {
        let mut cfg = self.config.clone();
        if let Some(b) = draws {
            cfg.draws = b;
        }
        if let Some(l) = level {
            cfg.level = l;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let var = match variant {
            "exact" => Variant::Exact,
            "approx" => Variant::Approx,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown variant '{other}' (expected exact or approx)"
                )))
            }
        };
        let eval = &self.eval;
        let draws = py
            .detach(|| match var {
                Variant::Exact => perturb_exact(eval, &cfg),
                Variant::Approx => perturb_approx(eval, &cfg),
            })
            .map_err(to_py)?;
        let scalars = summarize_draws(&draws, cfg.level).map_err(to_py)?;
        let band = summarize_band(&draws, cfg.level).map_err(to_py)?;
        Ok(InferenceResult {
            draws,
            scalars,
            band,
            level: cfg.level,
        })
    }

    /// The full report artifact (schema, config, per-method blocks, and the
    /// given inference) as a JSON string.
    #[pyo3(signature = (inference=None))]
    fn report_json(&self, inference: Option<PyRef<'_, InferenceResult>>) -> PyResult<String> {
        let artifact = build_artifact(
            &self.eval,
            &self.config,
            inference.as_ref().map(|i| &i.draws),
        )
        .map_err(to_py)?;
        serde_json::to_string_pretty(&artifact).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "EvaluationResult(methods=[{}], cv={})",
            self.methods().join(", "),
            self.eval.cv.is_some()
        )
    }
}

/// Monte-Carlo experiment summary: oracle truth plus bias/SE/RMSE (x100)
/// per measure and estimator.
#[pyclass]
struct SimulationResult {
    summary: ExperimentSummary,
}

#[pymethods]
impl SimulationResult {
    /// One dict per (measure, estimator) cell.
    fn table<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.summary
            .cells
            .iter()
            .map(|c| {
                let d = PyDict::new(py);
                d.set_item("measure", &c.measure)?;
                d.set_item("method", c.method.name())?;
                d.set_item("bias", c.bias)?;
                d.set_item("se", c.se)?;
                d.set_item("rmse", c.rmse)?;
                d.set_item("n_fail", c.n_fail)?;
                Ok(d)
            })
            .collect()
    }

    /// Oracle values of each measure on the target population.
    fn truth<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (name, value) in self.summary.truth_names.iter().zip(&self.summary.truth) {
            d.set_item(name, *value)?;
        }
        Ok(d)
    }

    #[getter]
    fn replicates(&self) -> usize {
        self.summary.replicates
    }

    #[getter]
    fn failure_notes(&self) -> Vec<String> {
        self.summary.failure_notes.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.summary)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __str__(&self) -> String {
        self.summary.to_string()
    }
}

#[allow(clippy::too_many_arguments)]
fn run_config(
    seed: u64,
    folds: usize,
    draws: usize,
    level: f64,
    u0: Vec<f64>,
    methods: Option<Vec<String>>,
    pi_min: f64,
    h1_scale: f64,
    h2_scale: f64,
    nu2: f64,
    mu_interactions: Option<Vec<(usize, usize)>>,
    pi_interactions: Option<Vec<(usize, usize)>>,
    threads: usize,
) -> PyResult<RunConfig> {
    Ok(RunConfig {
        seed,
        h1_scale,
        h2_scale,
        nu2,
        pi_min,
        folds,
        draws,
        level,
        u0,
        methods: parse_methods(methods)?,
        mu_interactions: mu_interactions.unwrap_or_default(),
        pi_interactions: pi_interactions.unwrap_or_default(),
        threads,
    })
}

/// Runs every requested estimator on a study; cross-validated bias
/// correction applies to the main estimator when `folds >= 2`.
#[pyfunction]
#[pyo3(signature = (study, *, folds=5, seed=1, draws=1000, level=0.95, u0=vec![0.05],
                    methods=None, pi_min=0.01, h1_scale=1.0, h2_scale=1.0, nu2=0.4,
                    mu_interactions=None, pi_interactions=None, threads=0))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    study: PyRef<'_, Study>,
    folds: usize,
    seed: u64,
    draws: usize,
    level: f64,
    u0: Vec<f64>,
    methods: Option<Vec<String>>,
    pi_min: f64,
    h1_scale: f64,
    h2_scale: f64,
    nu2: f64,
    mu_interactions: Option<Vec<(usize, usize)>>,
    pi_interactions: Option<Vec<(usize, usize)>>,
    threads: usize,
) -> PyResult<EvaluationResult> {
    let config = run_config(
        seed, folds, draws, level, u0, methods, pi_min, h1_scale, h2_scale, nu2,
        mu_interactions, pi_interactions, threads,
    )?;
    let data = &study.data;
    let eval = py
        .detach(|| evaluate_all(data, &config))
        .map_err(to_py)?;
    Ok(EvaluationResult { eval, config })
}

fn scenario(
    shift: &str,
    misspec: &str,
    n: usize,
    big_n: usize,
    n_t: usize,
    validation_labels: usize,
    p: usize,
    rho: f64,
    sigma2: f64,
    seed: u64,
) -> PyResult<SimScenario> {
    Ok(SimScenario {
        p,
        sigma2,
        rho,
        shift: parse_shift(shift)?,
        misspec: parse_misspec(misspec)?,
        n,
        big_n,
        n_t,
        n_target_labeled: validation_labels,
        seed,
    })
}

/// Draws one synthetic study from the covariate-shift generating mechanism.
#[pyfunction]
#[pyo3(signature = (*, shift="moderate", misspec="both_correct", n=200, big_n=10_000,
                    n_t=10_000, validation_labels=100, p=10, rho=0.2, sigma2=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate_study(
    py: Python<'_>,
    shift: &str,
    misspec: &str,
    n: usize,
    big_n: usize,
    n_t: usize,
    validation_labels: usize,
    p: usize,
    rho: f64,
    sigma2: f64,
    seed: u64,
) -> PyResult<Study> {
    let sc = scenario(
        shift, misspec, n, big_n, n_t, validation_labels, p, rho, sigma2, seed,
    )?;
    let generated = py
        .detach(|| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            generate_dataset(&sc, &mut rng)
        })
        .map_err(to_py)?;
    Ok(Study {
        data: generated.data,
    })
}

/// Monte-Carlo experiment: repeated studies, every estimator against the
/// oracle truth of the generating mechanism.
#[pyfunction]
#[pyo3(signature = (*, shift="moderate", misspec="both_correct", n=200, big_n=10_000,
                    n_t=10_000, validation_labels=100, p=10, rho=0.2, sigma2=1.0,
                    replicates=200, oracle_draws=1_000_000, seed=0, folds=5,
                    u0=vec![0.05], methods=None, threads=0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    shift: &str,
    misspec: &str,
    n: usize,
    big_n: usize,
    n_t: usize,
    validation_labels: usize,
    p: usize,
    rho: f64,
    sigma2: f64,
    replicates: usize,
    oracle_draws: usize,
    seed: u64,
    folds: usize,
    u0: Vec<f64>,
    methods: Option<Vec<String>>,
    threads: usize,
) -> PyResult<SimulationResult> {
    let sc = scenario(
        shift, misspec, n, big_n, n_t, validation_labels, p, rho, sigma2, seed,
    )?;
    let config = run_config(
        seed,
        folds,
        0,
        0.95,
        u0,
        methods,
        0.01,
        1.0,
        1.0,
        0.4,
        None,
        None,
        threads,
    )?;
    let summary = py
        .detach(|| run_experiment(&sc, &config, replicates, oracle_draws))
        .map_err(to_py)?;
    Ok(SimulationResult { summary })
}

#[pymodule]
fn steam_eval_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Study>()?;
    m.add_class::<EvaluationResult>()?;
    m.add_class::<InferenceResult>()?;
    m.add_class::<SimulationResult>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_study, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
