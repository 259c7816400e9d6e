//! Linear risk scores, the target-population percentile transform (empirical
//! CDF of the fitted score over the target cohort), and the probability
//! integral transform used to standardize scores before kernel smoothing.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::glm::Coefficients;

/// Which cohort a score set was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopulationTag {
    LabeledSource,
    UnlabeledSource,
    Target,
}

/// Raw linear scores together with their target-percentile transforms.
#[derive(Debug, Clone)]
pub struct ScoreSet {
    pub raw: Array1<f64>,
    /// Fraction of target units with score ≤ the unit's raw score; in [0,1].
    pub percentile: Array1<f64>,
    pub population_tag: PopulationTag,
}

/// Empirical CDF of the fitted scores over the target cohort:
/// t ↦ N_t⁻¹ #{i ∈ target : score_i ≤ t}, with ties counted by ≤.
#[derive(Debug, Clone)]
pub struct EcdfEvaluator {
    sorted: Vec<f64>,
}

impl EcdfEvaluator {
    pub fn new(mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidInput("empty target score vector".into()));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite target score".into()));
        }
        scores.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { sorted: scores })
    }

    /// Fraction of target scores ≤ t, by binary search on the sorted scores.
    pub fn eval(&self, t: f64) -> f64 {
        let count = self.sorted.partition_point(|&s| s <= t);
        count as f64 / self.sorted.len() as f64
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }
}

/// Linear predictor xᵢᵀβ for every row.
pub fn linear_scores(beta: &Coefficients, cohort: &Array2<f64>) -> Result<Array1<f64>> {
    if cohort.ncols() != beta.values.len() {
        return Err(Error::InvalidInput(format!(
            "cohort has {} columns but beta has {}",
            cohort.ncols(),
            beta.values.len()
        )));
    }
    Ok(cohort.dot(&beta.values))
}

/// Builds the target-cohort ECDF of the fitted score.
pub fn target_ecdf(beta: &Coefficients, target: &Array2<f64>) -> Result<EcdfEvaluator> {
    let scores = linear_scores(beta, target)?;
    EcdfEvaluator::new(scores.to_vec())
}

/// Raw scores of a cohort together with their target percentiles.
pub fn percentile_scores(
    beta: &Coefficients,
    cohort: &Array2<f64>,
    ecdf: &EcdfEvaluator,
    population_tag: PopulationTag,
) -> Result<ScoreSet> {
    let raw = linear_scores(beta, cohort)?;
    let percentile = raw.mapv(|t| ecdf.eval(t));
    Ok(ScoreSet {
        raw,
        percentile,
        population_tag,
    })
}

/// Standard normal CDF, accurate to well below 1e-12 absolute error.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Probability integral transform: Φ((v − mean)/sd) elementwise, sd the
/// sample standard deviation. Output lies strictly inside (0,1) for finite
/// inputs; a zero-variance input is rejected as a degenerate score.
pub fn pit_standardize(scores: &Array1<f64>) -> Result<Array1<f64>> {
    let (mean, sd) = mean_sd(scores)?;
    Ok(scores.mapv(|v| normal_cdf((v - mean) / sd)))
}

/// Sample mean and standard deviation (n−1 denominator), rejecting
/// degenerate inputs.
pub(crate) fn mean_sd(scores: &Array1<f64>) -> Result<(f64, f64)> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "need at least two values to standardize".into(),
        ));
    }
    let mean = scores.sum() / n as f64;
    let ss = scores.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
    let sd = (ss / (n - 1) as f64).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::InvalidInput(
            "degenerate score: zero variance".into(),
        ));
    }
    Ok((mean, sd))
}
