//! Split → normalize → grid-searched probe → γ sweep → held-out evaluation.

use serde::{Deserialize, Serialize};

use crate::dataset::{fit_normalizer, split_grouped, ActivationDataset, Normalizer, SplitSpec};
use crate::error::Result;
use crate::labels::dataset_labels;
use crate::metrics::{report, CalibrationReport, DEFAULT_BINS};
use crate::probes::{grid_search, GridResult, ProbeData, ProbeGrid, TrainConfig, DEFAULT_HIDDEN};
use crate::steering::{default_gamma_grid, probe_outputs, steered_eval, sweep_gamma_outputs, Fallback, GammaSweep};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub split: SplitSpec,
    pub hidden: Vec<usize>,
    pub dropout_p: f64,
    pub grid: ProbeGrid,
    pub train: TrainConfig,
    pub gammas: Vec<f64>,
    pub fallback: Fallback,
    pub bins: usize,
    pub length_normalize: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            split: SplitSpec {
                train: 0.7,
                val: 0.15,
                test: 0.15,
                seed: 0,
            },
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout_p: 0.2,
            grid: ProbeGrid::default(),
            train: TrainConfig::default(),
            gammas: default_gamma_grid(),
            fallback: Fallback::Unsteered,
            bins: DEFAULT_BINS,
            length_normalize: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub normalizer: Normalizer,
    pub grid: GridResult,
    pub sweep: GammaSweep,
    pub test_base: CalibrationReport,
    pub test_steered: CalibrationReport,
}

/// Normalized rows and residual targets for a probe.
pub fn probe_inputs(ds: &ActivationDataset, norm: &Normalizer, length_normalize: bool) -> Result<(Vec<f32>, Vec<f32>)> {
    let x = norm.apply_rows(ds.activations())?;
    let y = dataset_labels(ds, length_normalize)?.residuals;
    Ok((x, y))
}

pub fn run_pipeline(ds: &ActivationDataset, cfg: &PipelineConfig) -> Result<PipelineResult> {
    let (train, val, test) = split_grouped(ds, &cfg.split)?;
    let normalizer = fit_normalizer(&train)?;
    let (xt, yt) = probe_inputs(&train, &normalizer, cfg.length_normalize)?;
    let (xv, yv) = probe_inputs(&val, &normalizer, cfg.length_normalize)?;
    let d = ds.d_model();
    let base_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train
    };
    let grid = grid_search(
        &cfg.hidden,
        cfg.dropout_p,
        cfg.seed,
        &cfg.grid,
        &base_cfg,
        &ProbeData::new(&xt, &yt, d)?,
        &ProbeData::new(&xv, &yv, d)?,
    )?;
    let val_out = probe_outputs(&val, &grid.probe, &normalizer, cfg.length_normalize)?;
    let sweep = sweep_gamma_outputs(&val_out, &cfg.gammas, cfg.fallback, cfg.bins)?;
    let test_out = probe_outputs(&test, &grid.probe, &normalizer, cfg.length_normalize)?;
    let test_base = report(&test_out.base_eval()?, cfg.bins)?;
    let test_steered = report(
        &steered_eval(&test_out.steer(sweep.best_gamma, cfg.fallback)?)?,
        cfg.bins,
    )?;
    Ok(PipelineResult {
        normalizer,
        grid,
        sweep,
        test_base,
        test_steered,
    })
}
