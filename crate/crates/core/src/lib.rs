//! Sampling-free inference, filtering, and training for probabilistic deep
//! state-space models with uncertain neural-network weights.
//!
//! The crate propagates Gaussian beliefs jointly over latent states and
//! network weights through ReLU MLPs in closed form, runs a deterministic
//! Gaussian filter on the augmented state, and trains models on a fully
//! deterministic Type-II MAP objective. Monte-Carlo and unscented-Kalman
//! baselines are included for comparison.

pub mod baselines;
pub mod error;
pub mod gaussian;
pub mod inference;
pub mod layers;
pub mod linalg;
pub mod model;
pub mod real;
pub mod serialize;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use gaussian::{condition, kl_to_standard_normal, repair_psd, GaussianBelief, JointBlocks};
pub use layers::{
    affine_forward, expected_jacobian, product_cov, product_cross_cov, product_mean,
    relu_forward, LayerBelief, LayerOp, Scheme, WeightCov, WeightLayout,
};
pub use linalg::Matrix;
pub use model::{
    augmented_step, emission_moments, AugmentedBelief, LayerKind, NetworkSpec, ProDssmModel,
    Trajectory, VarianceModel, WeightDistribution,
};
pub use inference::{det_filter, det_predict, predictive_distribution, FilterResult, PredictiveResult};
pub use train::{
    fit, gradient, log_hyper_prior, objective_value, pack, regression_objective, ssm_objective,
    unpack, FitResult, GradientMode, ObjectiveKind, ParamBlock, TrainConfig,
};
pub use baselines::{mc_moments, mc_objective, ukf_filter, McConfig, McMoments, SigmaPointSet, UkfParams};
