//! Sparse autoencoders over normalized activations: training, feature
//! statistics and selection, single-feature ablation, and feature steering.

mod ablate;
mod model;
mod persist;
mod select;

pub use ablate::{
    ablate_feature, ablation_sweep, apply_sae_steering, impacts_csv, sae_steer_eval,
    steering_weights, AblationImpact, OptionScorer, SteeringWeights,
};
pub use model::{train_sae, SaeGradients, SaeHistory, SaeModel, SaeTrainConfig};
pub use persist::{load_sae, save_sae, SAE_FILE, SAE_FORMAT, SAE_WEIGHTS_FILE};
pub use select::{
    feature_stats, impact_scores, select_by_correlation, select_by_impact, select_union,
    FeatureStats, ACTIVE_THRESHOLD, MIN_ACTIVE_COUNT, MIN_ACTIVE_FREQUENCY,
};
