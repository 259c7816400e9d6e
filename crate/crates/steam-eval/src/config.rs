//! Run configuration shared by the estimation pipeline, the simulation
//! harness, and the command-line interface. Every field has a default that
//! matches the design decision of the module owning it, and every output
//! artifact embeds the fully resolved configuration for auditability.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::accuracy::Method;
use crate::error::{Error, Result};

/// RNG stream for fold assignment.
pub const STREAM_FOLDS: u64 = 0;
/// RNG stream for perturbation multipliers.
pub const STREAM_PERTURB: u64 = 1;

/// One master seed drives several independent random components; each gets
/// its own ChaCha stream so adding draws to one never shifts another.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master RNG seed for fold assignment and perturbation draws.
    pub seed: u64,
    /// Multiplier on the plug-in bandwidth of both propensity-smoothing
    /// coordinates (σ̂·M^{−1/6} each).
    pub h1_scale: f64,
    /// Multiplier on the plug-in risk-curve bandwidth n^{−ν₂}·σ̂.
    pub h2_scale: f64,
    /// Undersmoothing exponent ν₂ of the risk-curve bandwidth; must lie
    /// strictly between 1/4 and 1/2.
    pub nu2: f64,
    /// Propensity clip bound: π̂ is restricted to [pi_min, 1−pi_min].
    pub pi_min: f64,
    /// K for the cross-validated bias correction; 0 disables CV.
    pub folds: usize,
    /// Number of perturbation draws B for resampling inference.
    pub draws: usize,
    /// Confidence level for resampling intervals.
    pub level: f64,
    /// FPR constraints u₀ at which operating points are reported.
    pub u0: Vec<f64>,
    /// Estimators to run.
    pub methods: Vec<Method>,
    /// Interaction pairs (1-based covariate indices) appended to the raw
    /// design for the outcome model.
    pub mu_interactions: Vec<(usize, usize)>,
    /// Interaction pairs appended for the selection model.
    pub pi_interactions: Vec<(usize, usize)>,
    /// Worker threads (0 = use all available).
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            h1_scale: 1.0,
            h2_scale: 1.0,
            nu2: 0.4,
            pi_min: 0.01,
            folds: 5,
            draws: 1000,
            level: 0.95,
            u0: vec![0.05],
            methods: vec![
                Method::Source,
                Method::TargetLabeled,
                Method::Weighted,
                Method::DrAug,
                Method::Steam,
            ],
            mu_interactions: Vec::new(),
            pi_interactions: Vec::new(),
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h1_scale > 0.0 && self.h1_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "h1_scale {} must be positive",
                self.h1_scale
            )));
        }
        if !(self.h2_scale > 0.0 && self.h2_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "h2_scale {} must be positive",
                self.h2_scale
            )));
        }
        if !(self.nu2 > 0.25 && self.nu2 < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "nu2 {} must lie strictly between 1/4 and 1/2",
                self.nu2
            )));
        }
        if !(self.pi_min > 0.0 && self.pi_min < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "pi_min {} must lie in (0, 0.5)",
                self.pi_min
            )));
        }
        if self.folds == 1 {
            return Err(Error::InvalidConfig(
                "folds must be 0 (no cross-validation) or at least 2".into(),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence level {} must lie in (0, 1)",
                self.level
            )));
        }
        if self.u0.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one FPR constraint u0 is required".into(),
            ));
        }
        for &u in &self.u0 {
            if !(u > 0.0 && u <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "u0 {u} must lie in (0, 1]"
                )));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("empty method list".into()));
        }
        Ok(())
    }
}
