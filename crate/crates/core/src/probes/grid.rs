use serde::{Deserialize, Serialize};

use super::mlp::{init_probe, MlpProbe};
use super::train::{train, ProbeData, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub lambda_outs: Vec<f64>,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-4, 3e-4, 1e-3],
            weight_decays: vec![1e-4, 1e-2],
            lambda_outs: vec![0.0, 0.01, 0.1],
        }
    }
}

impl ProbeGrid {
    /// Cells in enumeration order: learning rate outermost, λ_out innermost.
    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &wd in &self.weight_decays {
                for &lam in &self.lambda_outs {
                    out.push((lr, wd, lam));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda_out: f64,
    pub val_r2: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub probe: MlpProbe,
    pub config: TrainConfig,
    pub history: TrainHistory,
    pub table: Vec<GridCell>,
    pub best_index: usize,
}

impl GridResult {
    /// `grid.csv` contents.
    pub fn csv(&self) -> String {
        let mut s = String::from("learning_rate,weight_decay,lambda_out,val_r2,best_epoch,selected,error\n");
        for (i, c) in self.table.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.learning_rate,
                c.weight_decay,
                c.lambda_out,
                c.val_r2.map(|v| v.to_string()).unwrap_or_default(),
                c.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
                u8::from(i == self.best_index),
                c.error.as_deref().unwrap_or("").replace(',', ";"),
            ));
        }
        s
    }
}

/// Train one probe per grid cell and keep the best validation R².
///
/// Ties go to the lower weight decay, then the lower learning rate, then the
/// earlier cell. Failed cells are recorded in the table; the search fails only
/// when every cell does.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    hidden: &[usize],
    dropout_p: f64,
    init_seed: u64,
    grid: &ProbeGrid,
    base: &TrainConfig,
    train_set: &ProbeData,
    val_set: &ProbeData,
) -> Result<GridResult> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::EmptyInput("probe grid"));
    }
    let init = init_probe(train_set.dim, hidden, dropout_p, init_seed)?;
    let runs = par::map_indexed(cells.len(), |i| {
        let (lr, wd, lam) = cells[i];
        let cfg = TrainConfig {
            learning_rate: lr,
            weight_decay: wd,
            lambda_out: lam,
            ..*base
        };
        train(init.clone(), train_set, val_set, &cfg).map(|(p, h)| (p, h, cfg))
    });

    let mut table = Vec::with_capacity(cells.len());
    let mut best: Option<usize> = None;
    let mut first_err = None;
    for (i, run) in runs.iter().enumerate() {
        let (lr, wd, lam) = cells[i];
        let mut cell = GridCell {
            learning_rate: lr,
            weight_decay: wd,
            lambda_out: lam,
            val_r2: None,
            best_epoch: None,
            error: None,
        };
        match run {
            Ok((_, h, _)) => {
                cell.val_r2 = Some(h.best_r2());
                cell.best_epoch = Some(h.best_epoch);
                let wins = match best {
                    None => true,
                    Some(b) => {
                        let (r, rb) = (h.best_r2(), table_r2(&table, b));
                        let (wb, lb) = (cells[b].1, cells[b].0);
                        r > rb || (r == rb && (wd < wb || (wd == wb && lr < lb)))
                    }
                };
                if wins {
                    best = Some(i);
                }
            }
            Err(e) => {
                cell.error = Some(e.to_string());
                first_err.get_or_insert_with(|| e.to_string());
            }
        }
        table.push(cell);
    }

    let Some(best_index) = best else {
        return Err(Error::BadConfig(format!(
            "every grid cell failed; first error: {}",
            first_err.unwrap_or_default()
        )));
    };
    let (probe, history, config) = runs
        .into_iter()
        .nth(best_index)
        .expect("index in range")
        .expect("best cell succeeded");
    Ok(GridResult {
        probe,
        config,
        history,
        table,
        best_index,
    })
}

fn table_r2(table: &[GridCell], i: usize) -> f64 {
    table[i].val_r2.unwrap_or(f64::NEG_INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn data(n: usize, d: usize, seed: u64) -> (Vec<f32>, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..n * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let y = x.chunks(d).map(|r| 0.3 * r[0] - 0.2 * r[1]).collect();
        (x, y)
    }

    fn base() -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            max_epochs: 15,
            early_stop_patience: 3,
            ..Default::default()
        }
    }

    #[test]
    fn single_cell_grid_returns_that_config() {
        let (xt, yt) = data(200, 4, 0);
        let (xv, yv) = data(100, 4, 1);
        let grid = ProbeGrid {
            learning_rates: vec![2e-3],
            weight_decays: vec![1e-3],
            lambda_outs: vec![0.05],
        };
        let r = grid_search(
            &[8],
            0.0,
            0,
            &grid,
            &base(),
            &ProbeData::new(&xt, &yt, 4).unwrap(),
            &ProbeData::new(&xv, &yv, 4).unwrap(),
        )
        .unwrap();
        assert_eq!(r.best_index, 0);
        assert_eq!(
            (r.config.learning_rate, r.config.weight_decay, r.config.lambda_out),
            (2e-3, 1e-3, 0.05)
        );
        assert!(r.csv().lines().count() == 2);
    }

    #[test]
    fn sane_learning_rate_beats_diverging_one() {
        let (xt, yt) = data(300, 4, 2);
        let (xv, yv) = data(100, 4, 3);
        let grid = ProbeGrid {
            learning_rates: vec![1e6, 3e-3],
            weight_decays: vec![0.0],
            lambda_outs: vec![0.0],
        };
        let tr = ProbeData::new(&xt, &yt, 4).unwrap();
        let va = ProbeData::new(&xv, &yv, 4).unwrap();
        let r = grid_search(&[16], 0.0, 0, &grid, &base(), &tr, &va).unwrap();
        assert_eq!(r.config.learning_rate, 3e-3);
        let sane = r.table[1].val_r2.unwrap();
        assert!(r.table[0].val_r2.is_none_or(|v| v < sane));
    }

    #[test]
    fn equal_r2_prefers_lower_weight_decay() {
        // learning rate so small that training barely moves: both cells see
        // the same predictions, so their R² values tie exactly.
        let (xt, yt) = data(64, 4, 4);
        let (xv, yv) = data(32, 4, 5);
        let grid = ProbeGrid {
            learning_rates: vec![1e-30],
            weight_decays: vec![1e-2, 1e-4],
            lambda_outs: vec![0.0],
        };
        let tr = ProbeData::new(&xt, &yt, 4).unwrap();
        let va = ProbeData::new(&xv, &yv, 4).unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            ..base()
        };
        let r = grid_search(&[4], 0.0, 0, &grid, &cfg, &tr, &va).unwrap();
        assert_eq!(r.table[0].val_r2, r.table[1].val_r2);
        assert_eq!(r.config.weight_decay, 1e-4);
        assert_eq!(r.best_index, 1);
    }
}
