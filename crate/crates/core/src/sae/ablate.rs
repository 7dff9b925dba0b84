use serde::{Deserialize, Serialize};

use super::model::SaeModel;
use crate::dataset::ActivationDataset;
use crate::error::{Error, Result};
use crate::labels::softmax;
use crate::metrics::{self, report, CalibrationReport, EvalSet};
use crate::par::map_indexed;

/// Maps a raw activation for one option to that option's score. Used to
/// re-score ablated or steered activations.
pub trait OptionScorer: Sync {
    fn dim(&self) -> usize;
    fn score(&self, x: &[f32]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationImpact {
    pub feature: usize,
    pub delta_acc: f64,
    pub delta_ece: f64,
}

/// Removes feature `j`'s contribution from the reconstruction of `z`
/// (i.e. decodes the code with `f_j` zeroed).
pub fn ablate_feature(m: &SaeModel<f32>, z: &[f32], j: usize) -> Result<Vec<f32>> {
    if j >= m.n_features {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: m.n_features,
        });
    }
    let mut f = m.encode(z)?;
    f[j] = 0.0;
    m.decode(&f)
}

fn check_dims(m: &SaeModel<f32>, ds: &ActivationDataset, scorer: &dyn OptionScorer) -> Result<()> {
    for got in [ds.d_model(), scorer.dim()] {
        if got != m.d {
            return Err(Error::DimMismatch {
                expected: m.d,
                got,
            });
        }
    }
    Ok(())
}

/// Stored scores shifted by `delta[row]`, softmaxed per question.
fn eval_with_deltas(ds: &ActivationDataset, delta: &[f64]) -> Result<EvalSet> {
    let n = ds.n_options();
    let probs = ds
        .records()
        .iter()
        .enumerate()
        .map(|(q, r)| {
            let s: Vec<f64> = (0..n).map(|j| r.log_scores[j] + delta[q * n + j]).collect();
            softmax(&s)
        })
        .collect();
    EvalSet::new(probs, ds.records().iter().map(|r| r.correct).collect())
}

/// Ablates each listed feature on every option row and re-scores.
///
/// Scores are patched: an option's new score is its stored score plus
/// `score(x') − score(x)`. The baseline is the unablated reconstruction, so
/// reconstruction error cancels and a never-active feature has exactly zero
/// impact. Deltas are `ablated − baseline`.
pub fn ablation_sweep(
    m: &SaeModel<f32>,
    ds: &ActivationDataset,
    scorer: &dyn OptionScorer,
    features: &[usize],
    bins: usize,
) -> Result<Vec<AblationImpact>> {
    check_dims(m, ds, scorer)?;
    if let Some(&j) = features.iter().find(|&&j| j >= m.n_features) {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: m.n_features,
        });
    }
    let (d, nf) = (m.d, m.n_features);
    let rows = ds.n_rows();
    let z = m.normalizer.apply_rows(ds.activations())?;
    let codes = m.encode_rows(&z)?;
    let z_hat = m.decode_rows(&codes)?;
    let norm = &m.normalizer;

    let raw = |zr: &[f32]| -> Vec<f32> {
        zr.iter()
            .zip(norm.mean.iter().zip(&norm.std))
            .map(|(&v, (&mu, &sd))| v * sd + mu)
            .collect()
    };
    let s_rec: Vec<f64> = map_indexed(rows, |r| {
        scorer.score(&raw(&z_hat[r * d..(r + 1) * d])) - scorer.score(ds.row(r))
    });
    let base = eval_with_deltas(ds, &s_rec)?;
    let (base_acc, base_ece) = (metrics::accuracy(&base), metrics::ece(&base, bins));

    let out = map_indexed(features.len(), |i| -> Result<AblationImpact> {
        let j = features[i];
        let mut delta = s_rec.clone();
        let mut touched = false;
        for r in 0..rows {
            let fj = codes[r * nf + j];
            if fj == 0.0 {
                continue;
            }
            touched = true;
            let zr: Vec<f32> = (0..d)
                .map(|k| z_hat[r * d + k] - fj * m.w_dec[k * nf + j])
                .collect();
            delta[r] = scorer.score(&raw(&zr)) - scorer.score(ds.row(r));
        }
        if !touched {
            return Ok(AblationImpact {
                feature: j,
                delta_acc: 0.0,
                delta_ece: 0.0,
            });
        }
        let ev = eval_with_deltas(ds, &delta)?;
        Ok(AblationImpact {
            feature: j,
            delta_acc: metrics::accuracy(&ev) - base_acc,
            delta_ece: metrics::ece(&ev, bins) - base_ece,
        })
    });
    out.into_iter().collect()
}

pub fn impacts_csv(impacts: &[AblationImpact]) -> String {
    let mut s = String::from("feature,delta_acc,delta_ece\n");
    for i in impacts {
        s.push_str(&format!("{},{},{}\n", i.feature, i.delta_acc, i.delta_ece));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringWeights {
    pub features: Vec<usize>,
    pub weights: Vec<f64>,
}

impl SteeringWeights {
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// `w_j = α_acc·max(−Δacc, 0) + α_cal·max(ΔECE, 0)`, keeping positive weights
/// and normalizing them to sum to one.
pub fn steering_weights(impacts: &[AblationImpact], alpha_acc: f64, alpha_cal: f64) -> Result<SteeringWeights> {
    let mut features = Vec::new();
    let mut weights = Vec::new();
    for i in impacts {
        let w = alpha_acc * (-i.delta_acc).max(0.0) + alpha_cal * i.delta_ece.max(0.0);
        if w > 0.0 {
            features.push(i.feature);
            weights.push(w);
        }
    }
    let total: f64 = weights.iter().sum();
    if features.is_empty() || !(total.is_finite() && total > 0.0) {
        return Err(Error::NoBeneficialFeatures);
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(SteeringWeights { features, weights })
}

/// `h′ = h + γ·(Σ_j f_j w_j d_j) ⊙ σ` with `f = encode(normalize(h))`.
pub fn apply_sae_steering(m: &SaeModel<f32>, h: &[f32], sw: &SteeringWeights, gamma: f64) -> Result<Vec<f32>> {
    if h.len() != m.d {
        return Err(Error::DimMismatch {
            expected: m.d,
            got: h.len(),
        });
    }
    if let Some(&j) = sw.features.iter().find(|&&j| j >= m.n_features) {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: m.n_features,
        });
    }
    if gamma == 0.0 || sw.is_empty() {
        return Ok(h.to_vec());
    }
    let f = m.encode(&m.normalizer.apply(h)?)?;
    let nf = m.n_features;
    Ok((0..m.d)
        .map(|i| {
            let pert: f64 = sw
                .features
                .iter()
                .zip(&sw.weights)
                .map(|(&j, &w)| f[j] as f64 * w * m.w_dec[i * nf + j] as f64)
                .sum();
            (h[i] as f64 + gamma * pert * m.normalizer.std[i] as f64) as f32
        })
        .collect())
}

/// Steers every option row and re-scores with patched scores; returns the
/// unsteered and steered reports.
pub fn sae_steer_eval(
    m: &SaeModel<f32>,
    ds: &ActivationDataset,
    scorer: &dyn OptionScorer,
    sw: &SteeringWeights,
    gamma: f64,
    bins: usize,
) -> Result<(CalibrationReport, CalibrationReport)> {
    check_dims(m, ds, scorer)?;
    let zeros = vec![0.0; ds.n_rows()];
    let base = report(&eval_with_deltas(ds, &zeros)?, bins)?;
    let delta: Result<Vec<f64>> = map_indexed(ds.n_rows(), |r| {
        let h = ds.row(r);
        Ok(scorer.score(&apply_sae_steering(m, h, sw, gamma)?) - scorer.score(h))
    })
    .into_iter()
    .collect();
    let steered = report(&eval_with_deltas(ds, &delta?)?, bins)?;
    Ok((base, steered))
}
