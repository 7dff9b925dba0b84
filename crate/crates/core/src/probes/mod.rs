//! Residual-correctness probes.

mod grid;
mod mlp;
mod persist;
mod ridge;
mod train;

pub use grid::{grid_search, GridCell, GridResult, ProbeGrid};
pub use mlp::{init_probe, Gradients, Mlp, MlpProbe, DEFAULT_HIDDEN};
pub use persist::{load_probe, save_probe, PROBE_FILE, PROBE_FORMAT, WEIGHTS_FILE};
pub use ridge::{fit_ridge, RidgeModel};
pub use train::{probe_loss, r_squared, train, ProbeData, TrainConfig, TrainHistory};

use crate::error::Result;

/// Anything that maps normalized option rows to residual predictions.
pub trait ResidualPredictor: Sync {
    fn d_in(&self) -> usize;

    /// Predictions for a `[rows, d_in]` matrix of normalized activations.
    fn predict_rows(&self, rows: &[f32]) -> Result<Vec<f32>>;
}
