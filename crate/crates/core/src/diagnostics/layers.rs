use serde::{Deserialize, Serialize};

use crate::dataset::{ActivationDataset, Normalizer};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, ece};
use crate::probes::ResidualPredictor;
use crate::steering::{probe_outputs, steered_eval, Fallback};

pub struct LayerInput<'a> {
    pub dataset: &'a ActivationDataset,
    pub probe: &'a dyn ResidualPredictor,
    pub normalizer: &'a Normalizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer: i64,
    pub acc: f64,
    pub ece: f64,
    pub base_acc: f64,
    pub base_ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub gamma: f64,
    pub rows: Vec<LayerRow>,
}

impl LayerReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("layer,acc,ece,base_acc,base_ece\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.layer, r.acc, r.ece, r.base_acc, r.base_ece
            ));
        }
        s
    }

    /// Layer with the largest accuracy gain over its baseline (lowest id on ties).
    pub fn best_gain_layer(&self) -> Option<i64> {
        let mut best: Option<&LayerRow> = None;
        for r in &self.rows {
            let gain = r.acc - r.base_acc;
            if best.is_none_or(|b| gain > b.acc - b.base_acc) {
                best = Some(r);
            }
        }
        best.map(|r| r.layer)
    }
}

/// Steered and unsteered accuracy/ECE on each layer's evaluation set.
pub fn layer_sweep_report(
    layers: &[LayerInput],
    gamma: f64,
    fallback: Fallback,
    bins: usize,
    length_normalize: bool,
) -> Result<LayerReport> {
    if layers.is_empty() {
        return Err(Error::EmptyInput("layers"));
    }
    let rows = layers
        .iter()
        .map(|l| {
            let out = probe_outputs(l.dataset, l.probe, l.normalizer, length_normalize)?;
            let base = out.base_eval()?;
            let steered = steered_eval(&out.steer(gamma, fallback)?)?;
            Ok(LayerRow {
                layer: l.dataset.layer_id(),
                acc: accuracy(&steered),
                ece: ece(&steered, bins),
                base_acc: accuracy(&base),
                base_ece: ece(&base, bins),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerReport { gamma, rows })
}
