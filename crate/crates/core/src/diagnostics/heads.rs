use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{grouped_folds, ActivationDataset, Normalizer};
use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::probes::{init_probe, r_squared, train, ProbeData, TrainConfig};

/// Hidden widths of the small per-head probe.
pub const HEAD_HIDDEN: [usize; 4] = [256, 128, 64, 32];

/// Per-(layer, head) activation sets over the same questions, stored in
/// layer-major order.
#[derive(Debug, Clone)]
pub struct HeadActivationSet {
    layers: usize,
    heads: usize,
    sets: Vec<ActivationDataset>,
}

/// Parses `layer=L,head=H` (whitespace and `;` separators tolerated).
pub fn parse_head_tag(tag: &str) -> Option<(usize, usize)> {
    let (mut layer, mut head) = (None, None);
    for part in tag.split([',', ';']) {
        let (k, v) = part.split_once('=')?;
        let v: usize = v.trim().parse().ok()?;
        match k.trim() {
            "layer" => layer = Some(v),
            "head" => head = Some(v),
            _ => {}
        }
    }
    Some((layer?, head?))
}

impl HeadActivationSet {
    /// Arranges datasets by the (layer, head) in their source tags. Every
    /// pair in the L×K grid must be present exactly once.
    pub fn from_datasets(sets: Vec<ActivationDataset>) -> Result<Self> {
        let first = sets.first().ok_or(Error::EmptyInput("head datasets"))?;
        let mut keyed = Vec::with_capacity(sets.len());
        for ds in &sets {
            let key = parse_head_tag(ds.source_tag()).ok_or_else(|| {
                Error::BadConfig(format!("source tag {:?} has no layer/head", ds.source_tag()))
            })?;
            if ds.n_rows() != first.n_rows() || ds.d_model() != first.d_model() {
                return Err(Error::ShapeMismatch(format!(
                    "head {key:?}: {}x{} vs {}x{}",
                    ds.n_rows(),
                    ds.d_model(),
                    first.n_rows(),
                    first.d_model()
                )));
            }
            if let Some(i) = ds
                .records()
                .iter()
                .zip(first.records())
                .position(|(a, b)| a.qid != b.qid)
            {
                return Err(Error::QidOrderMismatch(i));
            }
            keyed.push(key);
        }
        let layers = keyed.iter().map(|k| k.0).max().unwrap_or(0) + 1;
        let heads = keyed.iter().map(|k| k.1).max().unwrap_or(0) + 1;
        let mut slots: Vec<Option<ActivationDataset>> = vec![None; layers * heads];
        for (ds, (l, h)) in sets.into_iter().zip(keyed) {
            let slot = &mut slots[l * heads + h];
            if slot.is_some() {
                return Err(Error::BadConfig(format!("duplicate head layer={l},head={h}")));
            }
            *slot = Some(ds);
        }
        let sets = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| {
                    Error::BadConfig(format!("missing head layer={},head={}", i / heads, i % heads))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            heads,
            sets,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn d_head(&self) -> usize {
        self.sets[0].d_model()
    }

    pub fn n_questions(&self) -> usize {
        self.sets[0].n_questions()
    }

    pub fn get(&self, layer: usize, head: usize) -> &ActivationDataset {
        &self.sets[layer * self.heads + head]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub layer: usize,
    pub head: usize,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadProbeConfig {
    pub folds: usize,
    pub hidden: Vec<usize>,
    pub dropout_p: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for HeadProbeConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            hidden: HEAD_HIDDEN.to_vec(),
            dropout_p: 0.2,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

fn gather(ds: &ActivationDataset, labels: &[f32], qs: &[usize]) -> (Vec<f32>, Vec<f32>) {
    let n = ds.n_options();
    let mut x = Vec::with_capacity(qs.len() * n * ds.d_model());
    let mut y = Vec::with_capacity(qs.len() * n);
    for &q in qs {
        x.extend_from_slice(ds.question_rows(q));
        y.extend_from_slice(&labels[q * n..(q + 1) * n]);
    }
    (x, y)
}

/// Held-out R² of one head under question-grouped k-fold. A seeded fifth of
/// the training questions serves as the early-stopping set, so the scored
/// fold is never seen during training or model selection.
fn head_r2(ds: &ActivationDataset, labels: &[f32], fold_of: &[usize], cfg: &HeadProbeConfig) -> Result<f64> {
    let k = cfg.folds;
    let d = ds.d_model();
    let mut total = 0.0;
    for fold in 0..k {
        let test_q: Vec<usize> = (0..fold_of.len()).filter(|&q| fold_of[q] == fold).collect();
        let mut rest: Vec<usize> = (0..fold_of.len()).filter(|&q| fold_of[q] != fold).collect();
        rest.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(fold as u64 + 1)));
        let n_stop = (rest.len() / 5).max(1);
        let mut stop_q = rest[..n_stop].to_vec();
        let mut train_q = rest[n_stop..].to_vec();
        stop_q.sort_unstable();
        train_q.sort_unstable();
        let (xt, yt) = gather(ds, labels, &train_q);
        let (xs, ys) = gather(ds, labels, &stop_q);
        let (xh, yh) = gather(ds, labels, &test_q);
        let norm = Normalizer::fit_rows(&xt, d, "fold")?;
        let (xt, xs, xh) = (norm.apply_rows(&xt)?, norm.apply_rows(&xs)?, norm.apply_rows(&xh)?);
        let probe = init_probe(d, &cfg.hidden, cfg.dropout_p, cfg.seed)?;
        let (probe, _) = train(
            probe,
            &ProbeData::new(&xt, &yt, d)?,
            &ProbeData::new(&xs, &ys, d)?,
            &cfg.train,
        )?;
        total += r_squared(&probe.predict(&xh)?, &yh)?;
    }
    Ok(total / k as f64)
}

/// Mean held-out R² of a small residual probe on every head.
pub fn probe_heads(hs: &HeadActivationSet, labels: &[f32], cfg: &HeadProbeConfig) -> Result<Vec<HeadScore>> {
    let first = &hs.sets[0];
    if labels.len() != first.n_rows() {
        return Err(Error::LengthMismatch(labels.len(), first.n_rows()));
    }
    let fold_of = grouped_folds(hs.n_questions(), cfg.folds, cfg.seed)?;
    let scores = map_indexed(hs.sets.len(), |i| {
        head_r2(&hs.sets[i], labels, &fold_of, cfg).map(|r2| HeadScore {
            layer: i / hs.heads,
            head: i % hs.heads,
            r2,
        })
    });
    scores.into_iter().collect()
}

/// Smallest number of heads whose clamped R² reaches `target` of the total.
pub fn cumulative_signal(scores: &[HeadScore], target: f64) -> Result<usize> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::BadConfig(format!("target {target} outside (0, 1]")));
    }
    let mut vals: Vec<f64> = scores.iter().map(|s| s.r2.max(0.0)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = vals.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroSignal);
    }
    let goal = target * total;
    let mut acc = 0.0;
    for (i, v) in vals.iter().enumerate() {
        acc += v;
        // tolerate summation-order rounding at target = 1
        if acc >= goal * (1.0 - 1e-12) {
            return Ok(i + 1);
        }
    }
    Ok(vals.iter().filter(|&&v| v > 0.0).count())
}

pub fn heads_csv(scores: &[HeadScore]) -> String {
    let mut s = String::from("layer,head,r2\n");
    for h in scores {
        s.push_str(&format!("{},{},{}\n", h.layer, h.head, h.r2));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hs(r2: &[f64]) -> Vec<HeadScore> {
        r2.iter()
            .enumerate()
            .map(|(i, &r2)| HeadScore { layer: 0, head: i, r2 })
            .collect()
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(cumulative_signal(&hs(&[0.5, 0.3, 0.2]), 0.8).unwrap(), 2);
        assert_eq!(cumulative_signal(&hs(&[0.2, 0.5, 0.3]), 0.8).unwrap(), 2);
        for t in [0.01, 0.5, 1.0] {
            assert_eq!(cumulative_signal(&hs(&[0.0, 0.4, -0.2]), t).unwrap(), 1);
        }
        assert_eq!(cumulative_signal(&hs(&[0.1, 0.2, -0.3, 0.3, 0.0]), 1.0).unwrap(), 3);
        assert!(matches!(cumulative_signal(&hs(&[0.0, -0.1]), 0.8), Err(Error::AllZeroSignal)));
        assert!(cumulative_signal(&hs(&[0.3]), 0.0).is_err());
    }

    #[test]
    fn cumulative_is_monotone_in_target() {
        let s = hs(&[0.05, 0.3, 0.12, 0.0, 0.07, 0.2, -0.1, 0.01]);
        let counts: Vec<usize> = (1..=100)
            .map(|t| cumulative_signal(&s, t as f64 / 100.0).unwrap())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn tags() {
        assert_eq!(parse_head_tag("layer=3,head=17"), Some((3, 17)));
        assert_eq!(parse_head_tag("head=1;layer=0"), Some((0, 1)));
        assert_eq!(parse_head_tag("synth:seed=4"), None);
        assert_eq!(parse_head_tag("layer=2"), None);
    }
}
