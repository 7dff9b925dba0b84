//! Per-head probing with cumulative-signal analysis, PCA dimensionality
//! curves, and per-layer steering reports.

mod heads;
mod layers;
mod pca;

pub use heads::{
    cumulative_signal, heads_csv, parse_head_tag, probe_heads, HeadActivationSet, HeadProbeConfig,
    HeadScore, HEAD_HIDDEN,
};
pub use layers::{layer_sweep_report, LayerInput, LayerReport, LayerRow};
pub use pca::{dimensionality_curve, pca_fit, DimCurve, Pca, DEFAULT_RIDGE_ALPHA};
