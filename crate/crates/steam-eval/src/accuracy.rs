//! Step III of the estimation pipeline: plug-in estimators of classification
//! accuracy on the target cohort (TPR/FPR curves, ROC, AUC, prevalence,
//! PPV/NPV, and FPR-constrained cutoffs), plus the comparator estimators used
//! by the simulation harness: the naive source-sample ROC, the
//! small-validation-sample ROC, importance-weighted ROC, and an augmented
//! inverse-probability-weighted (doubly robust) ROC.
//!
//! All curve estimators share one mechanism: sort the units by percentile
//! score, build suffix sums of per-unit "positive" and "negative" masses,
//! and read both sums off at each cutoff. With nonnegative masses this makes
//! the monotonicity of TPR(c) and FPR(c) exact by construction. The
//! augmented estimator has signed masses, so its curves are clamped to [0,1]
//! and restored to monotone form by a running minimum over increasing
//! cutoffs.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::RiskCurve;

/// Which estimator produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Source,
    TargetLabeled,
    Weighted,
    DrAug,
    Steam,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Source => "source",
            Method::TargetLabeled => "target_labeled",
            Method::Weighted => "weighted",
            Method::DrAug => "dr_aug",
            Method::Steam => "steam",
        }
    }
}

/// One evaluated cutoff of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub cutoff: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Accuracy summary at one FPR constraint u₀.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub u0: f64,
    pub cutoff: f64,
    pub tpr: f64,
    pub ppv: f64,
    pub npv: f64,
}

/// Estimation diagnostics carried into reports.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Propensities clipped (or denominator-fallbacks) in Step I.
    pub clip_count: usize,
    /// Risk-curve evaluations that hit the nearest-support fallback.
    pub fallback_count: usize,
}

/// Full accuracy report for one estimator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub method: Method,
    pub roc_grid: Vec<RocPoint>,
    pub auc: f64,
    pub prevalence: f64,
    pub at_fpr: Vec<OperatingPoint>,
    pub diagnostics: Diagnostics,
}

/// Default cutoff grid: every distinct target percentile value plus {0, 1}.
/// Every estimator's step function jumps only at these values, so this grid
/// captures each curve exactly.
pub fn default_cutoff_grid(target_percentiles: &Array1<f64>) -> Vec<f64> {
    let mut grid: Vec<f64> = target_percentiles.to_vec();
    grid.push(0.0);
    grid.push(1.0);
    grid.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    grid
}

fn validate_cutoffs(cutoffs: &[f64]) -> Result<()> {
    if cutoffs.is_empty() {
        return Err(Error::InvalidInput("empty cutoff grid".into()));
    }
    if cutoffs
        .iter()
        .any(|&c| !c.is_finite() || !(0.0..=1.0).contains(&c))
    {
        return Err(Error::InvalidInput("cutoffs must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Suffix-sum ROC evaluation: TPR(c) = Σ_{score ≥ c} pos / Σ pos and the
/// analogous FPR from `neg`. Totals must be checked by the caller.
fn roc_from_masses(
    scores: &Array1<f64>,
    pos: &[f64],
    neg: &[f64],
    cutoffs: &[f64],
) -> Vec<RocPoint> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
    let sorted_scores: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let mut pos_suffix = vec![0.0f64; n + 1];
    let mut neg_suffix = vec![0.0f64; n + 1];
    for k in (0..n).rev() {
        pos_suffix[k] = pos_suffix[k + 1] + pos[order[k]];
        neg_suffix[k] = neg_suffix[k + 1] + neg[order[k]];
    }
    let pos_total = pos_suffix[0];
    let neg_total = neg_suffix[0];
    cutoffs
        .iter()
        .map(|&c| {
            let k = sorted_scores.partition_point(|&s| s < c);
            RocPoint {
                cutoff: c,
                tpr: pos_suffix[k] / pos_total,
                fpr: neg_suffix[k] / neg_total,
            }
        })
        .collect()
}

/// STEAM TPR/FPR curves: imputes every target unit's outcome with the Step-II
/// risk curve at its percentile score and projects the indicator sums.
pub fn steam_tpr_fpr(
    target_percentiles: &Array1<f64>,
    risk: &RiskCurve,
    cutoffs: &[f64],
) -> Result<Vec<RocPoint>> {
    validate_cutoffs(cutoffs)?;
    let m: Vec<f64> = target_percentiles.iter().map(|&p| risk.eval(p)).collect();
    steam_tpr_fpr_imputed(target_percentiles, &m, cutoffs)
}

/// STEAM curves from precomputed imputed risks m̂ᵢ (one per target unit).
pub fn steam_tpr_fpr_imputed(
    target_percentiles: &Array1<f64>,
    m: &[f64],
    cutoffs: &[f64],
) -> Result<Vec<RocPoint>> {
    validate_cutoffs(cutoffs)?;
    if m.len() != target_percentiles.len() {
        return Err(Error::InvalidInput(
            "one imputed risk per target unit required".into(),
        ));
    }
    let pos: Vec<f64> = m.to_vec();
    let neg: Vec<f64> = m.iter().map(|&v| 1.0 - v).collect();
    let pos_total: f64 = pos.iter().sum();
    let neg_total: f64 = neg.iter().sum();
    if pos_total <= 0.0 {
        return Err(Error::DegenerateDenominator {
            quantity: "imputed prevalence",
            detail: "all imputed risks are zero".into(),
        });
    }
    if neg_total <= 0.0 {
        return Err(Error::DegenerateDenominator {
            quantity: "imputed prevalence",
            detail: "all imputed risks are one".into(),
        });
    }
    Ok(roc_from_masses(target_percentiles, &pos, &neg, cutoffs))
}

/// STEAM prevalence μ̂ = mean of imputed risks over the target cohort.
pub fn steam_prevalence(target_percentiles: &Array1<f64>, risk: &RiskCurve) -> f64 {
    target_percentiles.iter().map(|&p| risk.eval(p)).sum::<f64>() / target_percentiles.len() as f64
}

/// Area under the ROC curve by the trapezoid rule over grid points sorted by
/// FPR. The (0,0) limit point (cutoff above every score) is prepended when
/// the grid does not attain FPR = 0; the grid must reach FPR = 1 (a cutoff
/// of 0 guarantees this).
pub fn steam_auc(roc_grid: &[RocPoint]) -> Result<f64> {
    if roc_grid.len() < 2 {
        return Err(Error::InvalidInput(
            "ROC grid needs at least two points".into(),
        ));
    }
    let mut pts: Vec<(f64, f64)> = roc_grid.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    if pts[0].0 > 0.0 {
        pts.insert(0, (0.0, 0.0));
    }
    let last = pts[pts.len() - 1].0;
    if (last - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "ROC grid must reach FPR = 1 (include cutoff 0); max FPR {last}"
        )));
    }
    let mut auc = 0.0;
    for k in 1..pts.len() {
        auc += (pts[k].0 - pts[k - 1].0) * (pts[k].1 + pts[k - 1].1) * 0.5;
    }
    Ok(auc)
}

/// Right-continuous inverse of the FPR curve: the interpolated cutoff ĉ with
/// FPR(ĉ) = u₀, taken between the bracketing grid points. Also returns the
/// TPR interpolated at the same point (the ROC value at u₀).
pub fn roc_at_fpr(roc_grid: &[RocPoint], u0: f64) -> Result<(f64, f64)> {
    if !(u0 > 0.0 && u0 <= 1.0) {
        return Err(Error::InvalidInput(format!("u0 {u0} must lie in (0, 1]")));
    }
    let mut grid = roc_grid.to_vec();
    grid.sort_unstable_by(|a, b| a.cutoff.partial_cmp(&b.cutoff).unwrap());
    // FPR is nonincreasing in the cutoff: find the smallest cutoff with
    // FPR ≤ u0
    let k = grid.partition_point(|p| p.fpr > u0);
    if k == grid.len() {
        return Err(Error::UnattainableFpr {
            u0,
            min_fpr: grid.last().map(|p| p.fpr).unwrap_or(f64::NAN),
        });
    }
    if k == 0 {
        return Ok((grid[0].cutoff, grid[0].tpr));
    }
    let hi = &grid[k]; // fpr ≤ u0
    let lo = &grid[k - 1]; // fpr > u0
    if hi.fpr == u0 {
        return Ok((hi.cutoff, hi.tpr));
    }
    let t = (lo.fpr - u0) / (lo.fpr - hi.fpr);
    Ok((
        lo.cutoff + t * (hi.cutoff - lo.cutoff),
        lo.tpr + t * (hi.tpr - lo.tpr),
    ))
}

/// The interpolated cutoff alone.
pub fn steam_cutoff_at_fpr(roc_grid: &[RocPoint], u0: f64) -> Result<f64> {
    roc_at_fpr(roc_grid, u0).map(|(c, _)| c)
}

/// The ROC curve read as a step function of FPR, evaluated at each query:
/// the largest TPR among grid points with FPR ≤ the query, and 0 below the
/// smallest attained FPR. Queries must be sorted ascending. Used for
/// pointwise resampling bands, where every draw's curve must be evaluable
/// on one shared FPR grid.
pub fn tpr_step_at_fpr(roc_grid: &[RocPoint], queries: &[f64]) -> Result<Vec<f64>> {
    if queries.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput(
            "band FPR queries must be sorted ascending".into(),
        ));
    }
    let mut pts: Vec<(f64, f64)> = roc_grid.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    // running maximum of TPR in FPR order makes the lookup monotone even if
    // ties in FPR carry different TPRs
    let mut best = 0.0f64;
    for p in pts.iter_mut() {
        best = best.max(p.1);
        p.1 = best;
    }
    let mut out = Vec::with_capacity(queries.len());
    let mut k = 0usize;
    let mut current = 0.0f64;
    for &u in queries {
        while k < pts.len() && pts[k].0 <= u {
            current = pts[k].1;
            k += 1;
        }
        out.push(current);
    }
    Ok(out)
}

/// PPV/NPV from an operating point and a prevalence:
/// PPV = μ·TPR / (μ·TPR + (1−μ)·FPR),
/// NPV = (1−μ)(1−FPR) / ((1−μ)(1−FPR) + μ(1−TPR)).
pub fn steam_ppv_npv(tpr: f64, fpr: f64, prevalence: f64) -> Result<(f64, f64)> {
    for (name, v) in [("TPR", tpr), ("FPR", fpr), ("prevalence", prevalence)] {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Error::InvalidInput(format!("{name} {v} outside [0, 1]")));
        }
    }
    let ppv_den = prevalence * tpr + (1.0 - prevalence) * fpr;
    if ppv_den <= 0.0 {
        return Err(Error::DegenerateDenominator {
            quantity: "PPV denominator",
            detail: format!("μ·TPR + (1−μ)·FPR = {ppv_den}"),
        });
    }
    let npv_den = (1.0 - prevalence) * (1.0 - fpr) + prevalence * (1.0 - tpr);
    if npv_den <= 0.0 {
        return Err(Error::DegenerateDenominator {
            quantity: "NPV denominator",
            detail: format!("(1−μ)(1−FPR) + μ(1−TPR) = {npv_den}"),
        });
    }
    Ok((
        prevalence * tpr / ppv_den,
        (1.0 - prevalence) * (1.0 - fpr) / npv_den,
    ))
}

/// Importance-weighted empirical ROC on the labeled source cohort:
/// TPR(c) = Σ wᵢ I(𝒫̂ᵢ≥c) Yᵢ / Σ wᵢYᵢ, FPR with (1−Yᵢ). Returns the points
/// and the weighted prevalence Σ wᵢYᵢ / Σ wᵢ.
pub fn comparator_weighted(
    labeled_percentiles: &Array1<f64>,
    y: &Array1<f64>,
    w: &Array1<f64>,
    cutoffs: &[f64],
) -> Result<(Vec<RocPoint>, f64)> {
    validate_cutoffs(cutoffs)?;
    let n = labeled_percentiles.len();
    if y.len() != n || w.len() != n {
        return Err(Error::InvalidInput("input lengths differ".into()));
    }
    let pos: Vec<f64> = (0..n).map(|i| w[i] * y[i]).collect();
    let neg: Vec<f64> = (0..n).map(|i| w[i] * (1.0 - y[i])).collect();
    let pos_total: f64 = pos.iter().sum();
    let neg_total: f64 = neg.iter().sum();
    if pos_total <= 0.0 {
        return Err(Error::DegenerateDenominator {
            quantity: "weighted positives",
            detail: "no positive labeled outcomes".into(),
        });
    }
    if neg_total <= 0.0 {
        return Err(Error::DegenerateDenominator {
            quantity: "weighted negatives",
            detail: "no negative labeled outcomes".into(),
        });
    }
    Ok((
        roc_from_masses(labeled_percentiles, &pos, &neg, cutoffs),
        pos_total / w.sum(),
    ))
}

/// Unweighted empirical ROC plus prevalence; the basis of both the naive
/// source estimator (callers pass cross-fitted percentile scores to avoid
/// apparent-accuracy optimism) and the labeled-validation estimator.
pub fn empirical_roc(
    percentiles: &Array1<f64>,
    y: &Array1<f64>,
    cutoffs: &[f64],
) -> Result<(Vec<RocPoint>, f64)> {
    let ones = Array1::ones(percentiles.len());
    comparator_weighted(percentiles, y, &ones, cutoffs)
}

/// Augmented inverse-probability-weighted (doubly robust) ROC. The labeled
/// residual term and the target imputation term are put on a common scale by
/// the calibrated weight total:
///   num(c) = Σ_{i∈ℒ} wᵢ I(𝒫̂ᵢ≥c)(Yᵢ−m̂ᵢ) + (Σ_ℒ wᵢ / N_t)·Σ_{i∈𝒯} I(𝒫̂ᵢ≥c) m̂ᵢ
/// and TPR(c) = num(c)/num(0); the FPR analogue swaps (Yᵢ, m̂ᵢ) for their
/// complements. Signed masses can push raw ratios outside [0, 1] or out of
/// monotone order, so the curves are clamped and restored by a running
/// minimum over increasing cutoffs. Returns the points and the augmented
/// prevalence estimate.
pub fn comparator_dr_aug(
    labeled_percentiles: &Array1<f64>,
    y: &Array1<f64>,
    w: &Array1<f64>,
    m_labeled: &Array1<f64>,
    target_percentiles: &Array1<f64>,
    m_target: &Array1<f64>,
    cutoffs: &[f64],
) -> Result<(Vec<RocPoint>, f64)> {
    validate_cutoffs(cutoffs)?;
    let n = labeled_percentiles.len();
    let nt = target_percentiles.len();
    if y.len() != n || w.len() != n || m_labeled.len() != n || m_target.len() != nt {
        return Err(Error::InvalidInput("input lengths differ".into()));
    }
    let w_total = w.sum();
    let ratio = w_total / nt as f64;

    // pooled score vector: labeled units then target units
    let mut scores = Vec::with_capacity(n + nt);
    scores.extend(labeled_percentiles.iter().copied());
    scores.extend(target_percentiles.iter().copied());
    let scores = Array1::from_vec(scores);
    let mut pos = Vec::with_capacity(n + nt);
    let mut neg = Vec::with_capacity(n + nt);
    for i in 0..n {
        pos.push(w[i] * (y[i] - m_labeled[i]));
        neg.push(w[i] * ((1.0 - y[i]) - (1.0 - m_labeled[i])));
    }
    for i in 0..nt {
        pos.push(ratio * m_target[i]);
        neg.push(ratio * (1.0 - m_target[i]));
    }
    let pos_total: f64 = pos.iter().sum();
    let neg_total: f64 = neg.iter().sum();
    if pos_total <= 0.0 || neg_total <= 0.0 {
        return Err(Error::DegenerateDenominator {
            quantity: "augmented class masses",
            detail: format!("positive total {pos_total}, negative total {neg_total}"),
        });
    }
    let mut points = roc_from_masses(&scores, &pos, &neg, cutoffs);
    // clamp and isotonize (nonincreasing in the cutoff)
    points.sort_unstable_by(|a, b| a.cutoff.partial_cmp(&b.cutoff).unwrap());
    let mut max_tpr = 1.0f64;
    let mut max_fpr = 1.0f64;
    for p in points.iter_mut() {
        p.tpr = p.tpr.clamp(0.0, 1.0).min(max_tpr);
        p.fpr = p.fpr.clamp(0.0, 1.0).min(max_fpr);
        max_tpr = p.tpr;
        max_fpr = p.fpr;
    }
    // pos_total + neg_total = Σℒ w·0 + ratio·N_t = Σℒ w exactly in algebra
    let prevalence = (pos_total / w_total).clamp(1e-12, 1.0 - 1e-12);
    Ok((points, prevalence))
}

/// Assembles a full report from a ROC grid: AUC, prevalence, and one
/// operating point per requested FPR constraint.
pub fn assemble_report(
    method: Method,
    roc_grid: Vec<RocPoint>,
    prevalence: f64,
    u0_list: &[f64],
    diagnostics: Diagnostics,
) -> Result<AccuracyReport> {
    if !(prevalence > 0.0 && prevalence < 1.0) {
        return Err(Error::DegenerateDenominator {
            quantity: "prevalence",
            detail: format!("estimated prevalence {prevalence} outside (0, 1)"),
        });
    }
    let auc = steam_auc(&roc_grid)?;
    let mut at_fpr = Vec::with_capacity(u0_list.len());
    for &u0 in u0_list {
        let (cutoff, tpr) = roc_at_fpr(&roc_grid, u0)?;
        let (ppv, npv) = steam_ppv_npv(tpr, u0, prevalence)?;
        at_fpr.push(OperatingPoint {
            u0,
            cutoff,
            tpr,
            ppv,
            npv,
        });
    }
    Ok(AccuracyReport {
        method,
        roc_grid,
        auc,
        prevalence,
        at_fpr,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::build_risk_curve;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn lattice(n: usize) -> Array1<f64> {
        Array1::from_iter((1..=n).map(|r| r as f64 / n as f64))
    }

    fn random_m(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| 0.05 + 0.9 * rng.random::<f64>()).collect()
    }

    #[test]
    fn step_band_lookup_matches_brute_force() {
        let grid = vec![
            RocPoint {
                cutoff: 0.0,
                tpr: 1.0,
                fpr: 1.0,
            },
            RocPoint {
                cutoff: 0.4,
                tpr: 0.8,
                fpr: 0.3,
            },
            RocPoint {
                cutoff: 0.7,
                tpr: 0.5,
                fpr: 0.3,
            },
            RocPoint {
                cutoff: 1.0,
                tpr: 0.2,
                fpr: 0.05,
            },
        ];
        let queries = [0.0, 0.04, 0.05, 0.1, 0.3, 0.9, 1.0];
        let got = tpr_step_at_fpr(&grid, &queries).unwrap();
        for (&u, &t) in queries.iter().zip(got.iter()) {
            let brute = grid
                .iter()
                .filter(|p| p.fpr <= u)
                .map(|p| p.tpr)
                .fold(0.0f64, f64::max);
            assert_eq!(t, brute, "query {u}");
        }
        assert_eq!(got[0], 0.0); // below the smallest attained FPR
        assert_eq!(got[4], 0.8); // ties in FPR resolve to the larger TPR
        assert!(tpr_step_at_fpr(&grid, &[0.5, 0.2]).is_err());
    }

    #[test]
    fn endpoints_at_degenerate_cutoffs() {
        let p = lattice(10).mapv(|v| v * 0.9); // strictly below 1
        let m = random_m(1, 10);
        let pts = steam_tpr_fpr_imputed(&p, &m, &[0.0, 1.0]).unwrap();
        assert_eq!(pts[0].tpr, 1.0);
        assert_eq!(pts[0].fpr, 1.0);
        assert_eq!(pts[1].tpr, 0.0);
        assert_eq!(pts[1].fpr, 0.0);
    }

    #[test]
    fn constant_imputation_gives_chance_curve() {
        let p = lattice(40);
        let m = vec![0.4; 40];
        let cutoffs = default_cutoff_grid(&p);
        let pts = steam_tpr_fpr_imputed(&p, &m, &cutoffs).unwrap();
        for pt in &pts {
            let frac = p.iter().filter(|&&v| v >= pt.cutoff).count() as f64 / 40.0;
            assert_abs_diff_eq!(pt.tpr, frac, epsilon = 1e-12);
            assert_abs_diff_eq!(pt.fpr, frac, epsilon = 1e-12);
        }
        // chance line integrates to 1/2
        assert_abs_diff_eq!(steam_auc(&pts).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Array1::from_iter((0..25).map(|_| rng.random::<f64>()));
        let y = Array1::from_iter((0..25).map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }));
        let w = Array1::from_iter((0..25).map(|_| 0.3 + rng.random::<f64>()));
        let risk = build_risk_curve(&p, &y, &w, 0.15).unwrap();
        let tgt = Array1::from_iter((0..25).map(|_| rng.random::<f64>()));
        let cutoffs = default_cutoff_grid(&tgt);
        let pts = steam_tpr_fpr(&tgt, &risk, &cutoffs).unwrap();
        let m: Vec<f64> = tgt.iter().map(|&q| risk.eval(q)).collect();
        let tot_m: f64 = m.iter().sum();
        let tot_1m: f64 = m.iter().map(|&v| 1.0 - v).sum();
        for pt in &pts {
            let mut num_m = 0.0;
            let mut num_1m = 0.0;
            for i in 0..25 {
                if tgt[i] >= pt.cutoff {
                    num_m += m[i];
                    num_1m += 1.0 - m[i];
                }
            }
            assert_abs_diff_eq!(pt.tpr, num_m / tot_m, epsilon = 1e-12);
            assert_abs_diff_eq!(pt.fpr, num_1m / tot_1m, epsilon = 1e-12);
        }
    }

    #[test]
    fn perfect_step_auc_within_grid_resolution() {
        // risks split cleanly by score: top half certain positive
        let n = 200;
        let p = lattice(n);
        let m: Vec<f64> = (1..=n)
            .map(|r| if r > n / 2 { 1.0 } else { 0.0 })
            .collect();
        // avoid fully degenerate masses at the ends
        let mut m = m;
        m[0] = 1e-9;
        m[n - 1] = 1.0 - 1e-9;
        let cutoffs = default_cutoff_grid(&p);
        let pts = steam_tpr_fpr_imputed(&p, &m, &cutoffs).unwrap();
        let auc = steam_auc(&pts).unwrap();
        assert!(auc > 1.0 - 1.0 / n as f64, "auc {auc}");
        assert!(auc <= 1.0);
    }

    #[test]
    fn degenerate_imputations_error() {
        let p = lattice(10);
        assert!(matches!(
            steam_tpr_fpr_imputed(&p, &vec![0.0; 10], &[0.5]),
            Err(Error::DegenerateDenominator { .. })
        ));
        assert!(matches!(
            steam_tpr_fpr_imputed(&p, &vec![1.0; 10], &[0.5]),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn cutoff_inversion_hits_exact_grid_points() {
        let grid = vec![
            RocPoint { cutoff: 0.0, tpr: 1.0, fpr: 1.0 },
            RocPoint { cutoff: 0.3, tpr: 0.9, fpr: 0.6 },
            RocPoint { cutoff: 0.7, tpr: 0.7, fpr: 0.2 },
            RocPoint { cutoff: 1.0, tpr: 0.2, fpr: 0.05 },
        ];
        // exact hit
        assert_abs_diff_eq!(steam_cutoff_at_fpr(&grid, 0.2).unwrap(), 0.7);
        // u0 = 1 → cutoff 0
        assert_abs_diff_eq!(steam_cutoff_at_fpr(&grid, 1.0).unwrap(), 0.0);
        // interpolation between (0.3, fpr 0.6) and (0.7, fpr 0.2): u0 = 0.4
        // sits halfway
        assert_abs_diff_eq!(steam_cutoff_at_fpr(&grid, 0.4).unwrap(), 0.5, epsilon = 1e-12);
        let (_, tpr) = roc_at_fpr(&grid, 0.4).unwrap();
        assert_abs_diff_eq!(tpr, 0.8, epsilon = 1e-12);
        // unattainable
        assert!(matches!(
            steam_cutoff_at_fpr(&grid, 0.01),
            Err(Error::UnattainableFpr { .. })
        ));
    }

    #[test]
    fn ppv_npv_algebra() {
        let (ppv, npv) = steam_ppv_npv(1.0, 0.0, 0.3).unwrap();
        assert_eq!((ppv, npv), (1.0, 1.0));
        for &mu in &[0.1, 0.37, 0.8] {
            for &t in &[0.2, 0.65] {
                let (ppv, npv) = steam_ppv_npv(t, t, mu).unwrap();
                assert_abs_diff_eq!(ppv, mu, epsilon = 1e-15);
                assert_abs_diff_eq!(npv, 1.0 - mu, epsilon = 1e-15);
            }
        }
        assert!(matches!(
            steam_ppv_npv(0.0, 0.0, 0.5),
            Err(Error::DegenerateDenominator { quantity: "PPV denominator", .. })
        ));
        assert!(matches!(
            steam_ppv_npv(1.0, 1.0, 0.5),
            Err(Error::DegenerateDenominator { quantity: "NPV denominator", .. })
        ));
    }

    #[test]
    fn weighted_reduces_to_unweighted_and_cancels_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Array1::from_iter((0..20).map(|_| rng.random::<f64>()));
        let y = Array1::from_iter((0..20).map(|i| ((i * 7) % 3 == 0) as u8 as f64));
        let cutoffs = default_cutoff_grid(&p);
        let ones = Array1::ones(20);
        let (a, prev_a) = comparator_weighted(&p, &y, &ones, &cutoffs).unwrap();
        let (b, prev_b) = empirical_roc(&p, &y, &cutoffs).unwrap();
        assert_eq!(prev_a, prev_b);
        for (x, z) in a.iter().zip(&b) {
            assert_eq!((x.tpr, x.fpr), (z.tpr, z.fpr));
        }
        let (c, prev_c) = comparator_weighted(&p, &y, &(&ones * 7.3), &cutoffs).unwrap();
        assert_abs_diff_eq!(prev_a, prev_c, epsilon = 1e-12);
        for (x, z) in a.iter().zip(&c) {
            assert_abs_diff_eq!(x.tpr, z.tpr, epsilon = 1e-12);
            assert_abs_diff_eq!(x.fpr, z.fpr, epsilon = 1e-12);
        }
    }

    #[test]
    fn weighted_matches_hand_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Array1::from_iter((0..20).map(|_| rng.random::<f64>()));
        let y = Array1::from_iter((0..20).map(|_| (rng.random::<f64>() < 0.45) as u8 as f64));
        let w = Array1::from_iter((0..20).map(|_| 0.2 + 2.0 * rng.random::<f64>()));
        let cutoffs = default_cutoff_grid(&p);
        let (pts, prev) = comparator_weighted(&p, &y, &w, &cutoffs).unwrap();
        let swy: f64 = (0..20).map(|i| w[i] * y[i]).sum();
        let sw1y: f64 = (0..20).map(|i| w[i] * (1.0 - y[i])).sum();
        assert_abs_diff_eq!(prev, swy / w.sum(), epsilon = 1e-15);
        for pt in &pts {
            let mut nt = 0.0;
            let mut nf = 0.0;
            for i in 0..20 {
                if p[i] >= pt.cutoff {
                    nt += w[i] * y[i];
                    nf += w[i] * (1.0 - y[i]);
                }
            }
            assert_abs_diff_eq!(pt.tpr, nt / swy, epsilon = 1e-12);
            assert_abs_diff_eq!(pt.fpr, nf / sw1y, epsilon = 1e-12);
        }
    }

    #[test]
    fn dr_aug_zero_augmentation_collapses_to_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lp = Array1::from_iter((0..30).map(|_| rng.random::<f64>()));
        let y = Array1::from_iter((0..30).map(|_| (rng.random::<f64>() < 0.5) as u8 as f64));
        let w = Array1::from_iter((0..30).map(|_| 0.3 + rng.random::<f64>()));
        let tp = Array1::from_iter((0..40).map(|_| rng.random::<f64>()));
        let zeros_l = Array1::zeros(30);
        let zeros_t = Array1::zeros(40);
        let cutoffs = default_cutoff_grid(&tp);
        // m̂ ≡ 0 kills the target term of the TPR numerator entirely
        let (aug, _) =
            comparator_dr_aug(&lp, &y, &w, &zeros_l, &tp, &zeros_t, &cutoffs).unwrap();
        let (wtd, _) = comparator_weighted(&lp, &y, &w, &cutoffs).unwrap();
        for (a, b) in aug.iter().zip(&wtd) {
            assert_abs_diff_eq!(a.tpr, b.tpr, epsilon = 1e-12);
        }
    }

    #[test]
    fn dr_aug_oracle_imputation_collapses_to_steam() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lp = Array1::from_iter((0..30).map(|_| rng.random::<f64>()));
        let y = Array1::from_iter((0..30).map(|_| (rng.random::<f64>() < 0.5) as u8 as f64));
        let ones = Array1::ones(30);
        let tp = Array1::from_iter((0..40).map(|_| rng.random::<f64>()));
        let m_t: Vec<f64> = random_m(7, 40);
        let m_t_arr = Array1::from_vec(m_t.clone());
        let cutoffs = default_cutoff_grid(&tp);
        let (aug, _) =
            comparator_dr_aug(&lp, &y, &ones, &y.clone(), &tp, &m_t_arr, &cutoffs).unwrap();
        let steam = steam_tpr_fpr_imputed(&tp, &m_t, &cutoffs).unwrap();
        for (a, b) in aug.iter().zip(&steam) {
            assert_abs_diff_eq!(a.tpr, b.tpr, epsilon = 1e-12);
            assert_abs_diff_eq!(a.fpr, b.fpr, epsilon = 1e-12);
        }
    }

    #[test]
    fn empirical_auc_on_separated_and_random_labels() {
        // perfectly separated
        let p = lattice(20);
        let y = Array1::from_iter((1..=20).map(|r| (r > 10) as u8 as f64));
        let cutoffs = default_cutoff_grid(&p);
        let (pts, _) = empirical_roc(&p, &y, &cutoffs).unwrap();
        assert!(steam_auc(&pts).unwrap() > 0.99);
        // labels independent of scores
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = Array1::from_iter((0..1000).map(|_| rng.random::<f64>()));
        let y = Array1::from_iter((0..1000).map(|_| (rng.random::<f64>() < 0.5) as u8 as f64));
        let cutoffs = default_cutoff_grid(&p);
        let (pts, _) = empirical_roc(&p, &y, &cutoffs).unwrap();
        let auc = steam_auc(&pts).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "auc {auc}");
    }

    #[test]
    fn report_assembly_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tp = Array1::from_iter((0..60).map(|_| rng.random::<f64>()));
        let m = random_m(10, 60);
        let cutoffs = default_cutoff_grid(&tp);
        let pts = steam_tpr_fpr_imputed(&tp, &m, &cutoffs).unwrap();
        let prev = m.iter().sum::<f64>() / 60.0;
        let report = assemble_report(
            Method::Steam,
            pts,
            prev,
            &[0.1, 0.3],
            Diagnostics::default(),
        )
        .unwrap();
        assert_eq!(report.method.name(), "steam");
        assert!((0.0..=1.0).contains(&report.auc));
        for op in &report.at_fpr {
            // PPV/NPV recomputed from the identity must agree exactly
            let (ppv, npv) = steam_ppv_npv(op.tpr, op.u0, prev).unwrap();
            assert_eq!(op.ppv, ppv);
            assert_eq!(op.npv, npv);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn curves_are_monotone_for_all_methods(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 25;
            let nt = 30;
            let lp = Array1::from_iter((0..n).map(|_| rng.random::<f64>()));
            let mut y = Array1::from_iter((0..n).map(|_| (rng.random::<f64>() < 0.5) as u8 as f64));
            y[0] = 1.0; // guarantee both classes
            y[1] = 0.0;
            let w = Array1::from_iter((0..n).map(|_| 0.2 + 2.0 * rng.random::<f64>()));
            let m_l = Array1::from_iter((0..n).map(|_| rng.random::<f64>()));
            let tp = Array1::from_iter((0..nt).map(|_| rng.random::<f64>()));
            let m_t = Array1::from_iter((0..nt).map(|_| 0.02 + 0.96 * rng.random::<f64>()));
            let mut cutoffs = default_cutoff_grid(&tp);
            cutoffs.extend(default_cutoff_grid(&lp));
            cutoffs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            cutoffs.dedup();

            let check = |pts: &[RocPoint]| {
                for k in 1..pts.len() {
                    prop_assert!(pts[k].tpr <= pts[k - 1].tpr);
                    prop_assert!(pts[k].fpr <= pts[k - 1].fpr);
                    prop_assert!((0.0..=1.0).contains(&pts[k].tpr));
                    prop_assert!((0.0..=1.0).contains(&pts[k].fpr));
                }
                Ok(())
            };
            let steam = steam_tpr_fpr_imputed(&tp, m_t.as_slice().unwrap(), &cutoffs).unwrap();
            check(&steam)?;
            let (wtd, _) = comparator_weighted(&lp, &y, &w, &cutoffs).unwrap();
            check(&wtd)?;
            let (emp, _) = empirical_roc(&lp, &y, &cutoffs).unwrap();
            check(&emp)?;
            let (aug, _) = comparator_dr_aug(&lp, &y, &w, &m_l, &tp, &m_t, &cutoffs).unwrap();
            check(&aug)?;
        }
    }
}
