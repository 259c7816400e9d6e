//! Step I of the estimation pipeline: fit the selection model α̂ on pooled
//! unlabeled data, calibrate the source-membership propensity π̂ by
//! two-dimensional kernel smoothing of S over the two model scores
//! (α̂ᵀΨ, β̂ᵀZ), and emit calibrated density-ratio weights ŵᵢ = (1−π̂ᵢ)/π̂ᵢ
//! for labeled source units.
//!
//! Both score coordinates are standardized by a probability integral
//! transform (pooled mean/sd, then the normal CDF) before smoothing. The
//! product Gaussian kernel uses a plug-in bandwidth σ̂·M^{-1/6} per
//! standardized coordinate, M the pooled count; kernel values beyond 8
//! bandwidths are treated as exactly zero, which lets the evaluator prune
//! with a sorted window on the first coordinate. The propensity is clipped
//! to [π_min, 1−π_min] and clipping is counted.
//!
//! The constant factor P(S=1)/P(S=0) of the population density ratio is
//! intentionally omitted from ŵ: every downstream accuracy estimate is a
//! ratio in the weights, so a common positive factor cancels.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};

use crate::data_model::{expand_basis, BasisExpansion, StudyData};
use crate::error::{Error, Result};
use crate::glm::{self, Coefficients};
use crate::scores::{mean_sd, normal_cdf};

pub const DEFAULT_PI_MIN: f64 = 0.01;
/// Gaussian kernel support in bandwidth units; the tail beyond is < 1e-14
/// relative and is treated as exactly zero.
const KERNEL_SUPPORT: f64 = 8.0;
const DENOM_FLOOR: f64 = 1e-300;

/// Calibrated density-ratio weights for the labeled source cohort.
#[derive(Debug, Clone)]
pub struct CalibratedWeights {
    /// wᵢ = (1 − πᵢ)/πᵢ, finite and positive by clipping.
    pub w: Array1<f64>,
    /// Clipped propensities in [π_min, 1−π_min].
    pub pi: Array1<f64>,
    /// Number of units whose raw propensity fell outside the clip range
    /// (including degenerate-denominator fallbacks).
    pub clip_count: usize,
}

/// Fits the selection model: adaptive-lasso logistic regression of the
/// source indicator S (1 = unlabeled source row, 0 = target row) on the
/// pooled unlabeled design expanded by `expansion`. The adaptive exponent is
/// fixed at γ = 1. `lambda_grid = None` uses the default 50-point path.
pub fn fit_selection_model(
    data: &StudyData,
    expansion: &BasisExpansion,
    lambda_grid: Option<&[f64]>,
) -> Result<Coefficients> {
    let expanded = expand_basis(data, expansion)?;
    let n_u = expanded.n_unlabeled();
    let n_t = expanded.n_target();
    let cols = expanded.unlabeled_source().ncols();
    let mut pooled = Array2::<f64>::zeros((n_u + n_t, cols));
    pooled
        .slice_mut(ndarray::s![..n_u, ..])
        .assign(expanded.unlabeled_source());
    pooled
        .slice_mut(ndarray::s![n_u.., ..])
        .assign(expanded.target());
    let mut s = Array1::<f64>::zeros(n_u + n_t);
    s.slice_mut(ndarray::s![..n_u]).fill(1.0);
    let w = Array1::<f64>::ones(n_u + n_t);
    match lambda_grid {
        Some(grid) => glm::fit_adaptive_lasso(&pooled, &s, &w, 1.0, grid),
        None => {
            let grid = glm::default_lambda_grid(&pooled, &s, &w, 1.0)?;
            glm::fit_adaptive_lasso(&pooled, &s, &w, 1.0, &grid)
        }
    }
}

/// Bandwidth policy for the two smoothing coordinates: explicit values, or
/// the plug-in rule σ̂·M^{-1/6} times a scale factor.
#[derive(Debug, Clone, Copy)]
pub enum Bandwidth {
    PlugIn { scale: f64 },
    Fixed(f64),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::PlugIn { scale: 1.0 }
    }
}

impl Bandwidth {
    fn resolve(&self, pit_values: &[f64], nu: f64) -> Result<f64> {
        let h = match *self {
            Bandwidth::Fixed(h) => h,
            Bandwidth::PlugIn { scale } => {
                let arr = Array1::from_iter(pit_values.iter().copied());
                let (_, sd) = mean_sd(&arr)?;
                scale * sd * nu
            }
        };
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidConfig(format!("bandwidth {h} must be > 0")));
        }
        Ok(h)
    }
}

/// Everything that does not change when the β coordinate is recalibrated.
#[derive(Debug)]
struct PooledBase {
    /// Pooled μ-model design rows (unlabeled source then target).
    zmu: Array2<f64>,
    alpha: Array1<f64>,
    /// Raw-score standardization for α queries.
    a_mean: f64,
    a_sd: f64,
    h_a: f64,
    /// Pooled units sorted by the PIT-standardized α coordinate.
    a_sorted: Vec<f64>,
    s_sorted: Vec<f64>,
    order: Vec<u32>,
    nu: f64,
    pi_min: f64,
    h_b_policy: Bandwidth,
}

/// Immutable propensity evaluator: maps a unit's two design rows to π̂.
/// `recalibrated` rebuilds only the β coordinate, which is what per-fold
/// refits and perturbation draws need.
#[derive(Debug, Clone)]
pub struct PiCalibrator {
    base: Arc<PooledBase>,
    beta: Array1<f64>,
    b_mean: f64,
    b_sd: f64,
    h_b: f64,
    /// PIT-standardized β coordinate in the α-sorted order.
    b_sorted: Vec<f64>,
    /// Raw β scores in pooled order (kept for the analytic gradient).
    b_raw: Vec<f64>,
}

fn pooled_scores(unlabeled: &Array2<f64>, target: &Array2<f64>, coef: &Array1<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(unlabeled.nrows() + target.nrows());
    for row in unlabeled.rows() {
        out.push(row.dot(coef));
    }
    for row in target.rows() {
        out.push(row.dot(coef));
    }
    out
}

fn pit_vec(raw: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let arr = Array1::from_iter(raw.iter().copied());
    let (mean, sd) = mean_sd(&arr)?;
    Ok((
        raw.iter().map(|&v| normal_cdf((v - mean) / sd)).collect(),
        mean,
        sd,
    ))
}

/// Builds the Step-I propensity evaluator. `data_pi` must be expanded by the
/// selection basis (the design α̂ was fit on) and `data_mu` by the outcome
/// basis (the design β̂ was fit on); the two views must hold the same rows.
pub fn calibrate_pi(
    alpha: &Coefficients,
    beta: &Coefficients,
    data_pi: &StudyData,
    data_mu: &StudyData,
    h1: (Bandwidth, Bandwidth),
    pi_min: f64,
) -> Result<PiCalibrator> {
    if !(pi_min > 0.0 && pi_min < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "pi_min {pi_min} must lie in (0, 0.5)"
        )));
    }
    if data_pi.n_unlabeled() != data_mu.n_unlabeled() || data_pi.n_target() != data_mu.n_target() {
        return Err(Error::InvalidInput(
            "selection-basis and outcome-basis views hold different rows".into(),
        ));
    }
    let n_u = data_pi.n_unlabeled();
    let n_t = data_pi.n_target();
    let m = n_u + n_t;
    if alpha.values.len() != data_pi.unlabeled_source().ncols() {
        return Err(Error::InvalidInput("alpha length mismatch".into()));
    }
    if beta.values.len() != data_mu.unlabeled_source().ncols() {
        return Err(Error::InvalidInput("beta length mismatch".into()));
    }

    let a_raw = pooled_scores(data_pi.unlabeled_source(), data_pi.target(), &alpha.values);
    let b_raw = pooled_scores(data_mu.unlabeled_source(), data_mu.target(), &beta.values);
    let (a_pit, a_mean, a_sd) = pit_vec(&a_raw)?;
    let nu = (m as f64).powf(-1.0 / 6.0);
    let h_a = h1.0.resolve(&a_pit, nu)?;

    let mut order: Vec<u32> = (0..m as u32).collect();
    order.sort_unstable_by(|&i, &j| a_pit[i as usize].partial_cmp(&a_pit[j as usize]).unwrap());
    let a_sorted: Vec<f64> = order.iter().map(|&i| a_pit[i as usize]).collect();
    let s_sorted: Vec<f64> = order
        .iter()
        .map(|&i| if (i as usize) < n_u { 1.0 } else { 0.0 })
        .collect();

    let mut zmu = Array2::<f64>::zeros((m, data_mu.unlabeled_source().ncols()));
    zmu.slice_mut(ndarray::s![..n_u, ..])
        .assign(data_mu.unlabeled_source());
    zmu.slice_mut(ndarray::s![n_u.., ..])
        .assign(data_mu.target());

    let base = Arc::new(PooledBase {
        zmu,
        alpha: alpha.values.clone(),
        a_mean,
        a_sd,
        h_a,
        a_sorted,
        s_sorted,
        order,
        nu,
        pi_min,
        h_b_policy: h1.1,
    });
    beta_side(base, beta.values.clone(), b_raw)
}

fn beta_side(base: Arc<PooledBase>, beta: Array1<f64>, b_raw: Vec<f64>) -> Result<PiCalibrator> {
    let (b_pit, b_mean, b_sd) = pit_vec(&b_raw)?;
    let h_b = base.h_b_policy.resolve(&b_pit, base.nu)?;
    let b_sorted: Vec<f64> = base.order.iter().map(|&i| b_pit[i as usize]).collect();
    Ok(PiCalibrator {
        base,
        beta,
        b_mean,
        b_sd,
        h_b,
        b_sorted,
        b_raw,
    })
}

impl PiCalibrator {
    /// Rebuilds the β coordinate (scores, PIT, bandwidth) for new outcome
    /// coefficients; the α coordinate and pooled sample stay shared.
    pub fn recalibrated(&self, beta: &Coefficients) -> Result<PiCalibrator> {
        if beta.values.len() != self.base.zmu.ncols() {
            return Err(Error::InvalidInput("beta length mismatch".into()));
        }
        let b_raw: Vec<f64> = self
            .base
            .zmu
            .rows()
            .into_iter()
            .map(|r| r.dot(&beta.values))
            .collect();
        beta_side(Arc::clone(&self.base), beta.values.clone(), b_raw)
    }

    pub fn pi_min(&self) -> f64 {
        self.base.pi_min
    }

    pub fn bandwidths(&self) -> (f64, f64) {
        (self.base.h_a, self.h_b)
    }

    fn query_coords(&self, psi_row: ArrayView1<f64>, zmu_row: ArrayView1<f64>) -> (f64, f64) {
        let a_raw = psi_row.dot(&self.base.alpha);
        let b_raw = zmu_row.dot(&self.beta);
        (
            normal_cdf((a_raw - self.base.a_mean) / self.base.a_sd),
            normal_cdf((b_raw - self.b_mean) / self.b_sd),
        )
    }

    /// Window of pooled units within kernel support of the α coordinate.
    fn a_window(&self, a_q: f64) -> (usize, usize) {
        let lo = self
            .base
            .a_sorted
            .partition_point(|&a| a < a_q - KERNEL_SUPPORT * self.base.h_a);
        let hi = self
            .base
            .a_sorted
            .partition_point(|&a| a <= a_q + KERNEL_SUPPORT * self.base.h_a);
        (lo, hi)
    }

    /// Raw Nadaraya–Watson value before clipping. Returns `None` when every
    /// kernel weight underflows (query far outside the pooled support).
    fn raw_at_coords(&self, a_q: f64, b_q: f64) -> Option<f64> {
        let (lo, hi) = self.a_window(a_q);
        let inv_ha = 1.0 / self.base.h_a;
        let inv_hb = 1.0 / self.h_b;
        let max_db = KERNEL_SUPPORT * self.h_b;
        let mut num = 0.0;
        let mut den = 0.0;
        for j in lo..hi {
            let db = self.b_sorted[j] - b_q;
            if db.abs() > max_db {
                continue;
            }
            let ta = (self.base.a_sorted[j] - a_q) * inv_ha;
            let tb = db * inv_hb;
            let k = (-0.5 * (ta * ta + tb * tb)).exp();
            num += k * self.base.s_sorted[j];
            den += k;
        }
        if den < DENOM_FLOOR {
            None
        } else {
            Some(num / den)
        }
    }

    /// S value of the pooled unit nearest to the query in the
    /// bandwidth-scaled score metric; the limit of the smoother far from the
    /// support.
    fn nearest_s(&self, a_q: f64, b_q: f64) -> f64 {
        let inv_ha = 1.0 / self.base.h_a;
        let inv_hb = 1.0 / self.h_b;
        let mut best = f64::INFINITY;
        let mut s = 0.5;
        for j in 0..self.base.a_sorted.len() {
            let da = (self.base.a_sorted[j] - a_q) * inv_ha;
            let db = (self.b_sorted[j] - b_q) * inv_hb;
            let d = da * da + db * db;
            if d < best {
                best = d;
                s = self.base.s_sorted[j];
            }
        }
        s
    }

    /// Clipped propensity at a unit, plus whether clipping (or the
    /// degenerate-denominator fallback) was applied.
    pub fn pi_at_flagged(
        &self,
        psi_row: ArrayView1<f64>,
        zmu_row: ArrayView1<f64>,
    ) -> (f64, bool) {
        let (a_q, b_q) = self.query_coords(psi_row, zmu_row);
        let pi_min = self.base.pi_min;
        match self.raw_at_coords(a_q, b_q) {
            Some(raw) => {
                if raw < pi_min {
                    (pi_min, true)
                } else if raw > 1.0 - pi_min {
                    (1.0 - pi_min, true)
                } else {
                    (raw, false)
                }
            }
            None => {
                let s = self.nearest_s(a_q, b_q);
                (if s > 0.5 { 1.0 - pi_min } else { pi_min }, true)
            }
        }
    }

    /// Clipped propensity at a unit.
    pub fn pi_at(&self, psi_row: ArrayView1<f64>, zmu_row: ArrayView1<f64>) -> f64 {
        self.pi_at_flagged(psi_row, zmu_row).0
    }

    /// Unclipped smoother value (the quantity the analytic gradient refers
    /// to); `None` on degenerate denominator.
    pub(crate) fn pi_raw_at(
        &self,
        psi_row: ArrayView1<f64>,
        zmu_row: ArrayView1<f64>,
    ) -> Option<f64> {
        let (a_q, b_q) = self.query_coords(psi_row, zmu_row);
        self.raw_at_coords(a_q, b_q)
    }

    /// Analytic gradient of the raw (unclipped) smoother with respect to the
    /// outcome coefficients β, at each labeled-source unit. The chain rule
    /// runs through the raw β scores, their pooled PIT standardization
    /// (mean, sd), and the plug-in bandwidth of the β coordinate. Rows whose
    /// denominator degenerates are zero.
    pub fn grad_beta(
        &self,
        labeled_pi: &Array2<f64>,
        labeled_mu: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let m = self.b_raw.len();
        let q = self.base.zmu.ncols();
        if labeled_mu.ncols() != q || labeled_pi.ncols() != self.base.alpha.len() {
            return Err(Error::InvalidInput("design width mismatch".into()));
        }
        let mf = m as f64;

        // pooled-side precomputations, original pooled order
        let zbar: Array1<f64> = self.base.zmu.mean_axis(ndarray::Axis(0)).unwrap();
        // dσ/dβ = Σ (r_j − m̄)(z_j − z̄) / ((M−1) σ)
        let mut sigma_prime = Array1::<f64>::zeros(q);
        for j in 0..m {
            let dr = self.b_raw[j] - self.b_mean;
            for k in 0..q {
                sigma_prime[k] += dr * (self.base.zmu[[j, k]] - zbar[k]);
            }
        }
        sigma_prime.mapv_inplace(|v| v / ((mf - 1.0) * self.b_sd));

        // ds_j/dβ = φ(u_j)·[(z_j − z̄) − u_j σ'] / σ, stored in SORTED order
        let inv_sd = 1.0 / self.b_sd;
        let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let mut ds_sorted = Array2::<f64>::zeros((m, q));
        let mut s_pit_sorted = vec![0.0f64; m];
        for (pos, &orig_u32) in self.base.order.iter().enumerate() {
            let j = orig_u32 as usize;
            let u = (self.b_raw[j] - self.b_mean) * inv_sd;
            let phi = inv_sqrt_2pi * (-0.5 * u * u).exp();
            s_pit_sorted[pos] = self.b_sorted[pos];
            for k in 0..q {
                ds_sorted[[pos, k]] =
                    phi * ((self.base.zmu[[j, k]] - zbar[k]) - u * sigma_prime[k]) * inv_sd;
            }
        }

        // dh_b/dβ for the plug-in rule; an explicit bandwidth has zero
        // derivative.
        let mut dh_b = Array1::<f64>::zeros(q);
        if matches!(self.base.h_b_policy, Bandwidth::PlugIn { .. }) {
            let scale = match self.base.h_b_policy {
                Bandwidth::PlugIn { scale } => scale,
                Bandwidth::Fixed(_) => unreachable!(),
            };
            let sbar = s_pit_sorted.iter().sum::<f64>() / mf;
            let sd_s = {
                let ss: f64 = s_pit_sorted.iter().map(|&v| (v - sbar) * (v - sbar)).sum();
                (ss / (mf - 1.0)).sqrt()
            };
            for pos in 0..m {
                let c = s_pit_sorted[pos] - sbar;
                for k in 0..q {
                    dh_b[k] += c * ds_sorted[[pos, k]];
                }
            }
            dh_b.mapv_inplace(|v| scale * self.base.nu * v / ((mf - 1.0) * sd_s));
        }

        let n = labeled_mu.nrows();
        let mut grad = Array2::<f64>::zeros((n, q));
        let inv_ha = 1.0 / self.base.h_a;
        let inv_hb = 1.0 / self.h_b;
        let max_db = KERNEL_SUPPORT * self.h_b;
        let mut dt = vec![0.0f64; q];
        for i in 0..n {
            let (a_q, b_q) = self.query_coords(labeled_pi.row(i), labeled_mu.row(i));
            let u_x = (labeled_mu.row(i).dot(&self.beta) - self.b_mean) * inv_sd;
            let phi_x = inv_sqrt_2pi * (-0.5 * u_x * u_x).exp();
            let ds_x: Vec<f64> = (0..q)
                .map(|k| phi_x * ((labeled_mu[[i, k]] - zbar[k]) - u_x * sigma_prime[k]) * inv_sd)
                .collect();

            let (lo, hi) = self.a_window(a_q);
            let mut num = 0.0;
            let mut den = 0.0;
            let mut dnum = vec![0.0f64; q];
            let mut dden = vec![0.0f64; q];
            for j in lo..hi {
                let db = self.b_sorted[j] - b_q;
                if db.abs() > max_db {
                    continue;
                }
                let ta = (self.base.a_sorted[j] - a_q) * inv_ha;
                let tb = db * inv_hb;
                let kappa = (-0.5 * (ta * ta + tb * tb)).exp();
                num += kappa * self.base.s_sorted[j];
                den += kappa;
                let coef = -kappa * tb;
                for k in 0..q {
                    dt[k] = (ds_sorted[[j, k]] - ds_x[k]) * inv_hb - tb * dh_b[k] * inv_hb;
                }
                let sj = self.base.s_sorted[j];
                for k in 0..q {
                    let dk = coef * dt[k];
                    dnum[k] += dk * sj;
                    dden[k] += dk;
                }
            }
            if den < DENOM_FLOOR {
                continue; // fallback region: treat as flat
            }
            let pi = num / den;
            for k in 0..q {
                grad[[i, k]] = (dnum[k] - pi * dden[k]) / den;
            }
        }
        Ok(grad)
    }
}

/// Calibrated weights wᵢ = (1 − π̂ᵢ)/π̂ᵢ over the labeled source cohort.
/// `labeled_pi`/`labeled_mu` are the unit rows under the selection and
/// outcome bases respectively.
pub fn calibrated_weights(
    pi_eval: &PiCalibrator,
    labeled_pi: &Array2<f64>,
    labeled_mu: &Array2<f64>,
) -> Result<CalibratedWeights> {
    let n = labeled_pi.nrows();
    if labeled_mu.nrows() != n {
        return Err(Error::InvalidInput("cohort row mismatch".into()));
    }
    let mut w = Array1::<f64>::zeros(n);
    let mut pi = Array1::<f64>::zeros(n);
    let mut clip_count = 0usize;
    for i in 0..n {
        let (p, clipped) = pi_eval.pi_at_flagged(labeled_pi.row(i), labeled_mu.row(i));
        if clipped {
            clip_count += 1;
        }
        pi[i] = p;
        w[i] = (1.0 - p) / p;
    }
    Ok(CalibratedWeights { w, pi, clip_count })
}
