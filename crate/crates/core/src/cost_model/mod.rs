//! Simulated designs, training samples, and estimation of the cost surface.

mod dgp;
mod estimator;
mod gbdt;
mod sample;

pub use dgp::{
    beta_quantile, calibrate_logistic, logistic, logit, normal_quantile, pam_cost, Dgp, LogisticDgp, BETA_ALPHA,
    BETA_BETA, C_BAR,
};
pub use estimator::{
    estimator_error, fit_cost_estimator, BinnedMean, CostEstimator, EstimatorConfig, EstimatorError, EstimatorKind,
    FeatureSet, FitMetadata, Surface, ESTIMATOR_FORMAT_VERSION,
};
pub use gbdt::{fit_gbdt, GbdtModel, GbdtParams, Tree};
pub use sample::{generate_training_sample, TrainingSample};
