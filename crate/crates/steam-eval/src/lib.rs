//! Semi-supervised evaluation of a fitted binary classifier on an unlabeled
//! target cohort under covariate shift.
//!
//! The library estimates ROC-based accuracy measures (TPR/FPR curves, AUC,
//! cutoffs, PPV/NPV, prevalence) for a risk score trained on a labeled source
//! sample, when the population of interest supplied only covariates. The
//! `steam` estimator combines three steps: calibrated density-ratio weights
//! obtained by smoothing the source-membership indicator over the fitted
//! model scores, a weighted kernel regression of the outcome on the target
//! percentile of the score, and a projection of that conditional risk onto
//! the target cohort. Cross-fitting removes apparent-accuracy optimism and
//! perturbation resampling supplies standard errors and confidence intervals.
//! Comparator estimators (naive source, small labeled target subsample,
//! density-ratio weighted, augmented doubly robust) and a Monte-Carlo
//! experiment harness are included.

pub mod accuracy;
pub mod cli;
pub mod config;
pub mod cv;
pub mod data_model;
pub mod density_ratio;
pub mod error;
pub mod glm;
pub mod inference;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod risk;
pub mod scores;
pub mod sim;

pub use error::{Error, Result};
