//! Residual-correctness probing and probability steering for multiple-choice QA.
//!
//! The crate works on stored per-option activation datasets (the `ACTV1`
//! directory format). A regression probe learns to predict, for each answer
//! option, the gap between the one-hot target and the model's probability.
//! At inference the centered predictions shift the option distribution, which
//! is then clamped and renormalized.
//!
//! Modules:
//! * [`dataset`]: on-disk format, grouped splits, z-score normalization.
//! * [`labels`]: softmax over option scores and residual targets.
//! * [`probes`]: MLP probe with AdamW training, ridge regression, persistence.
//! * [`steering`]: the clamp-renormalize steering rule and γ/layer selection.
//! * [`metrics`]: accuracy, ECE, class-wise ECE, Brier, NLL.
//! * [`sae`]: sparse autoencoders, feature selection, ablation, SAE steering.
//! * [`diagnostics`]: per-head probing, cumulative signal, PCA curves, layer sweeps.
//! * [`synth`]: synthetic tasks with a planted correctness direction.

pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod labels;
pub mod linalg;
pub mod metrics;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod probes;
pub mod sae;
pub mod steering;
pub mod synth;

pub use error::{Error, Result};
