//! Synthetic multiple-choice tasks with a planted correctness direction.
//!
//! Each option gets an isotropic Gaussian activation; the correct option is
//! additionally shifted along a unit *signal* direction. Base option scores
//! come from a hidden unit-norm readout that mixes the signal direction with
//! a *spurious* direction carrying no correctness information, divided by a
//! temperature. Temperatures below 1 and a nonzero spurious weight make the
//! base distribution overconfident and less accurate than the activations
//! allow, which is exactly the gap a residual probe can close.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ensure_dir, save_dataset, write_file, ActivationDataset, QuestionRecord};
use crate::error::{Error, Result};
use crate::labels::{dataset_labels, softmax};
use crate::sae::{OptionScorer, SaeModel};

pub const TASK_FILE: &str = "task.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_questions: usize,
    pub n_options: usize,
    pub d_model: usize,
    /// Coordinates carrying the correctness signal (and, separately, the spurious direction).
    pub signal_dims: usize,
    pub signal_scale: f64,
    pub noise_scale: f64,
    pub readout_temperature: f64,
    /// Weight of the spurious direction in the readout.
    pub spurious_weight: f64,
    /// Std of independent noise added to each option score.
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_questions: 4000,
            n_options: 4,
            d_model: 256,
            signal_dims: 64,
            signal_scale: 6.0,
            noise_scale: 1.0,
            readout_temperature: 0.5,
            spurious_weight: 5.0,
            score_noise: 0.1,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.n_options < 2 || self.d_model == 0 {
            return bad(format!(
                "need n_options >= 2 and d_model >= 1 (got {} / {})",
                self.n_options, self.d_model
            ));
        }
        if self.signal_dims == 0 || self.signal_dims > self.d_model {
            return bad(format!(
                "signal_dims {} must be in 1..={}",
                self.signal_dims, self.d_model
            ));
        }
        if self.spurious_weight != 0.0 && self.signal_dims == self.d_model {
            return bad("no coordinates left for the spurious direction".into());
        }
        let scales = [
            self.signal_scale,
            self.noise_scale,
            self.spurious_weight,
            self.score_noise,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad(format!("scales must be finite and >= 0: {scales:?}"));
        }
        if !(self.readout_temperature.is_finite() && self.readout_temperature > 0.0) {
            return bad(format!("temperature {}", self.readout_temperature));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub config: SynthConfig,
    /// Hidden readout vector; option scores are `readout · x / temperature`.
    pub readout: Vec<f32>,
    pub signal_direction: Vec<f32>,
    pub spurious_direction: Vec<f32>,
    pub signal_coords: Vec<usize>,
    pub spurious_coords: Vec<usize>,
    #[serde(skip)]
    pub dataset: Option<ActivationDataset>,
}

fn unit_on(coords: &[usize], d: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut v = vec![0.0f64; d];
    for &c in coords {
        v[c] = rng.sample(StandardNormal);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter()
        .map(|x| if norm > 0.0 { (x / norm) as f32 } else { 0.0 })
        .collect()
}

pub fn gen_task(cfg: &SynthConfig) -> Result<SynthTask> {
    cfg.validate()?;
    let d = cfg.d_model;
    let n = cfg.n_options;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let coords = sample(&mut rng, d, d).into_vec();
    let signal_coords = {
        let mut c = coords[..cfg.signal_dims].to_vec();
        c.sort_unstable();
        c
    };
    let spurious_coords = {
        let k = cfg.signal_dims.min(d - cfg.signal_dims);
        let mut c = coords[cfg.signal_dims..cfg.signal_dims + k].to_vec();
        c.sort_unstable();
        c
    };
    let signal = unit_on(&signal_coords, d, &mut rng);
    let spurious = unit_on(&spurious_coords, d, &mut rng);
    // unit-norm mix of the two directions
    let scale = 1.0 / (1.0 + cfg.spurious_weight * cfg.spurious_weight).sqrt();
    let readout: Vec<f32> = signal
        .iter()
        .zip(&spurious)
        .map(|(&a, &b)| ((a as f64 + cfg.spurious_weight * b as f64) * scale) as f32)
        .collect();

    let mut records = Vec::with_capacity(cfg.n_questions);
    let mut activations = Vec::with_capacity(cfg.n_questions * n * d);
    let mut scores = vec![0.0f64; n];
    for q in 0..cfg.n_questions {
        let correct = rng.random_range(0..n);
        for (j, score) in scores.iter_mut().enumerate() {
            let start = activations.len();
            for k in 0..d {
                let mut v = cfg.noise_scale * rng.sample::<f64, _>(StandardNormal);
                if j == correct {
                    v += cfg.signal_scale * signal[k] as f64;
                }
                activations.push(v as f32);
            }
            let x = &activations[start..];
            let s: f64 = x.iter().zip(&readout).map(|(&a, &b)| a as f64 * b as f64).sum();
            *score = s / cfg.readout_temperature
                + cfg.score_noise * rng.sample::<f64, _>(StandardNormal);
        }
        // store as log-probabilities
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        records.push(QuestionRecord {
            qid: format!("synth-{q:05}"),
            correct,
            log_scores: scores.iter().map(|s| s - lse).collect(),
            token_counts: vec![1; n],
        });
    }
    let dataset = ActivationDataset::new(
        d,
        n,
        0,
        format!("synth:seed={}", cfg.seed),
        records,
        activations,
    )?;
    Ok(SynthTask {
        config: *cfg,
        readout,
        signal_direction: signal,
        spurious_direction: spurious,
        signal_coords,
        spurious_coords,
        dataset: Some(dataset),
    })
}

impl SynthTask {
    pub fn dataset(&self) -> &ActivationDataset {
        self.dataset.as_ref().expect("task carries its dataset")
    }

    /// Writes the dataset directory plus `task.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        ensure_dir(dir)?;
        if let Some(ds) = &self.dataset {
            save_dataset(ds, dir)?;
        }
        let json = serde_json::to_string_pretty(self).expect("task serializes");
        write_file(&dir.join(TASK_FILE), json.as_bytes())
    }

    /// Loads `task.json` (and the dataset when present in the same directory).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (file, dir) = if path.is_dir() {
            (path.join(TASK_FILE), Some(path.to_path_buf()))
        } else {
            (path.to_path_buf(), path.parent().map(Path::to_path_buf))
        };
        if !file.is_file() {
            return Err(Error::MissingFile(file));
        }
        let raw = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        let mut task: SynthTask =
            serde_json::from_slice(&raw).map_err(|e| Error::json(&file, e))?;
        if let Some(dir) = dir {
            if dir.join(crate::dataset::MANIFEST_FILE).is_file() {
                task.dataset = Some(crate::dataset::load_dataset(&dir)?);
            }
        }
        Ok(task)
    }

    pub fn readout_score(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.readout.len() {
            return Err(Error::DimMismatch {
                expected: self.readout.len(),
                got: x.len(),
            });
        }
        let s: f64 = x
            .iter()
            .zip(&self.readout)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        Ok(s / self.config.readout_temperature)
    }
}

/// Features planted into an SAE by [`SynthTask::plant_sae_features`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedFeatures {
    pub decisive: usize,
    pub dormant: Vec<usize>,
}

impl SynthTask {
    /// Appends one decisive feature and `n_dormant` never-firing ones.
    ///
    /// The decisive feature fires with `ReLU(a · x)` on the raw activation
    /// and decodes back along `a`, so ablating it strips the signal from the
    /// correct option. Dormant features carry a large negative bias.
    pub fn plant_sae_features(
        &self,
        m: &mut SaeModel<f32>,
        n_dormant: usize,
        seed: u64,
    ) -> Result<PlantedFeatures> {
        let d = self.readout.len();
        if m.d != d {
            return Err(Error::DimMismatch { expected: d, got: m.d });
        }
        let (mu, sd) = (&m.normalizer.mean, &m.normalizer.std);
        let a = &self.signal_direction;
        let mut enc: Vec<f32> = (0..d).map(|i| a[i] * sd[i]).collect();
        let mut b_enc = vec![(0..d).map(|i| a[i] as f64 * mu[i] as f64).sum::<f64>() as f32];
        let mut dec: Vec<f32> = (0..d).map(|i| a[i] / sd[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all: Vec<usize> = (0..d).collect();
        for _ in 0..n_dormant {
            enc.extend(unit_on(&all, d, &mut rng));
            b_enc.push(-1e4);
            dec.extend(unit_on(&all, d, &mut rng));
        }
        let decisive = m.append_features(&enc, &b_enc, &dec)?;
        Ok(PlantedFeatures {
            decisive,
            dormant: (decisive + 1..decisive + 1 + n_dormant).collect(),
        })
    }
}

impl OptionScorer for SynthTask {
    fn dim(&self) -> usize {
        self.readout.len()
    }

    fn score(&self, x: &[f32]) -> f64 {
        self.readout_score(x).expect("dimension checked by caller")
    }
}

pub fn readout_score(task: &SynthTask, x: &[f32]) -> Result<f64> {
    task.readout_score(x)
}

/// Per-layer datasets over the same questions; only `signal_layer` carries the
/// task's activations, every other layer gets fresh isotropic noise.
pub fn gen_layer_stack(
    cfg: &SynthConfig,
    n_layers: usize,
    signal_layer: usize,
) -> Result<(SynthTask, Vec<ActivationDataset>)> {
    if signal_layer >= n_layers {
        return Err(Error::BadConfig(format!(
            "signal layer {signal_layer} outside 0..{n_layers}"
        )));
    }
    let task = gen_task(cfg)?;
    let base = task.dataset();
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let acts = if l == signal_layer {
            base.activations().to_vec()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9 * (l as u64 + 1)));
            (0..base.activations().len())
                .map(|_| (cfg.noise_scale * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect()
        };
        layers.push(ActivationDataset::new(
            base.d_model(),
            base.n_options(),
            l as i64,
            format!("synth:seed={};layer={l}", cfg.seed),
            base.records().to_vec(),
            acts,
        )?);
    }
    Ok((task, layers))
}

/// Per-(layer, head) datasets sharing `base`'s records. Planted heads carry
/// the residual label in coordinate 0; every other coordinate is noise.
pub fn gen_heads(
    base: &ActivationDataset,
    layers: usize,
    heads: usize,
    d_head: usize,
    planted: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<ActivationDataset>> {
    if d_head == 0 {
        return Err(Error::BadConfig("d_head must be positive".into()));
    }
    let labels = dataset_labels(base, false)?;
    let mut out = Vec::with_capacity(layers * heads);
    for l in 0..layers {
        for h in 0..heads {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((l * heads + h) as u64));
            let plant = planted.contains(&(l, h));
            let mut acts = Vec::with_capacity(base.n_rows() * d_head);
            for row in 0..base.n_rows() {
                for k in 0..d_head {
                    let noise: f32 = rng.sample(StandardNormal);
                    acts.push(if plant && k == 0 {
                        labels.residuals[row]
                    } else {
                        noise
                    });
                }
            }
            out.push(ActivationDataset::new(
                d_head,
                base.n_options(),
                l as i64,
                format!("layer={l},head={h}"),
                base.records().to_vec(),
                acts,
            )?);
        }
    }
    Ok(out)
}

/// Base accuracy of a dataset's stored scores (argmax, lowest index on ties).
/// Rows that are sparse combinations of a random unit-norm dictionary.
///
/// Each of the `n` rows sums `active` distinct atoms (out of `atoms`) with
/// coefficients drawn from U(0.5, 1.5). Returns `(rows [n, d], dictionary
/// [atoms, d])`.
pub fn gen_planted_dictionary(
    n: usize,
    d: usize,
    atoms: usize,
    active: usize,
    seed: u64,
) -> Result<(Vec<f32>, Vec<f32>)> {
    if d == 0 || atoms == 0 || active == 0 || active > atoms {
        return Err(Error::BadConfig(format!(
            "planted dictionary d={d} atoms={atoms} active={active}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..d).collect();
    let dict: Vec<f32> = (0..atoms).flat_map(|_| unit_on(&all, d, &mut rng)).collect();
    let mut rows = vec![0.0f32; n * d];
    for row in rows.chunks_mut(d) {
        for j in sample(&mut rng, atoms, active) {
            let c: f32 = rng.random_range(0.5..1.5);
            for (r, a) in row.iter_mut().zip(&dict[j * d..(j + 1) * d]) {
                *r += c * a;
            }
        }
    }
    Ok((rows, dict))
}

pub fn base_accuracy(ds: &ActivationDataset) -> f64 {
    let hits = ds
        .records()
        .iter()
        .filter(|r| crate::metrics::argmax(&softmax(&r.log_scores)) == r.correct)
        .count();
    hits as f64 / ds.n_questions().max(1) as f64
}
