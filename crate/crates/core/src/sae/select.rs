use serde::{Deserialize, Serialize};

use super::model::SaeModel;
use crate::error::{Error, Result};
use crate::probes::RidgeModel;

/// A code entry above this magnitude counts as active.
pub const ACTIVE_THRESHOLD: f32 = 1e-4;
pub const MIN_ACTIVE_COUNT: usize = 10;
/// Activation frequency must strictly exceed this fraction (0.01%).
pub const MIN_ACTIVE_FREQUENCY: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub n_samples: usize,
    pub frequency: Vec<f64>,
    pub count: Vec<usize>,
    /// Mean code value over all samples, inactive ones included.
    pub mean_activation: Vec<f64>,
    pub correlation: Vec<f64>,
}

impl FeatureStats {
    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    pub fn passes_filter(&self, j: usize) -> bool {
        self.count[j] >= MIN_ACTIVE_COUNT && self.frequency[j] > MIN_ACTIVE_FREQUENCY
    }
}

/// Activity counts and Pearson correlation of each feature with the labels,
/// over already-normalized rows.
pub fn feature_stats(m: &SaeModel<f32>, data: &[f32], labels: &[f32]) -> Result<FeatureStats> {
    let n = labels.len();
    if data.len() != n * m.d {
        return Err(Error::LengthMismatch(data.len() / m.d.max(1), n));
    }
    let codes = m.encode_rows(data)?;
    Ok(stats_from_codes(&codes, m.n_features, labels))
}

pub(crate) fn stats_from_codes(codes: &[f32], nf: usize, labels: &[f32]) -> FeatureStats {
    let n = labels.len();
    let y_mean = labels.iter().map(|&v| v as f64).sum::<f64>() / n.max(1) as f64;
    let yc: Vec<f64> = labels.iter().map(|&v| v as f64 - y_mean).collect();
    let syy: f64 = yc.iter().map(|v| v * v).sum();

    let mut count = vec![0usize; nf];
    let mut sf = vec![0.0f64; nf];
    let mut sff = vec![0.0f64; nf];
    let mut sfy = vec![0.0f64; nf];
    for (row, &y) in codes.chunks(nf).zip(&yc) {
        for (j, &v) in row.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            if v.abs() > ACTIVE_THRESHOLD {
                count[j] += 1;
            }
            let v = v as f64;
            sf[j] += v;
            sff[j] += v * v;
            sfy[j] += v * y;
        }
    }
    let nn = n.max(1) as f64;
    let correlation = (0..nf)
        .map(|j| {
            let var = sff[j] - sf[j] * sf[j] / nn;
            if var <= 1e-12 * sff[j].max(f64::MIN_POSITIVE) || syy <= 0.0 {
                0.0
            } else {
                (sfy[j] / (var * syy).sqrt()).clamp(-1.0, 1.0)
            }
        })
        .collect();
    FeatureStats {
        n_samples: n,
        frequency: count.iter().map(|&c| c as f64 / nn).collect(),
        mean_activation: sf.iter().map(|s| s / nn).collect(),
        count,
        correlation,
    }
}

/// Top-`k` features by correlation among those passing the activity filter.
pub fn select_by_correlation(stats: &FeatureStats, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..stats.len()).filter(|&j| stats.passes_filter(j)).collect();
    idx.sort_by(|&a, &b| {
        stats.correlation[b]
            .total_cmp(&stats.correlation[a])
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// `s_j = (d_j ⊙ σ)ᵀ w` scaled by the feature's mean activation, where `w`
/// is a linear residual predictor fitted in raw activation space.
pub fn impact_scores(
    m: &SaeModel<f32>,
    stats: &FeatureStats,
    ridge: &RidgeModel,
    sigma: &[f32],
) -> Result<Vec<f64>> {
    for len in [ridge.weights.len(), sigma.len()] {
        if len != m.d {
            return Err(Error::DimMismatch {
                expected: m.d,
                got: len,
            });
        }
    }
    if stats.len() != m.n_features {
        return Err(Error::DimMismatch {
            expected: m.n_features,
            got: stats.len(),
        });
    }
    let nf = m.n_features;
    let mut s = vec![0.0f64; nf];
    for (i, row) in m.w_dec.chunks(nf).enumerate() {
        let scale = sigma[i] as f64 * ridge.weights[i];
        for (acc, &w) in s.iter_mut().zip(row) {
            *acc += w as f64 * scale;
        }
    }
    Ok(s
        .iter()
        .zip(&stats.mean_activation)
        .map(|(s, a)| s * a)
        .collect())
}

pub fn select_by_impact(
    m: &SaeModel<f32>,
    stats: &FeatureStats,
    ridge: &RidgeModel,
    sigma: &[f32],
    k: usize,
) -> Result<Vec<usize>> {
    let impact = impact_scores(m, stats, ridge, sigma)?;
    let mut idx: Vec<usize> = (0..impact.len()).collect();
    idx.sort_by(|&a, &b| impact[b].abs().total_cmp(&impact[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Sorted, de-duplicated union of several selections.
pub fn select_union(sets: &[Vec<usize>]) -> Vec<usize> {
    let mut all: Vec<usize> = sets.iter().flatten().copied().collect();
    all.sort_unstable();
    all.dedup();
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Normalizer;

    fn stats(corr: &[f64], count: &[usize], n: usize) -> FeatureStats {
        FeatureStats {
            n_samples: n,
            frequency: count.iter().map(|&c| c as f64 / n as f64).collect(),
            count: count.to_vec(),
            mean_activation: vec![1.0; corr.len()],
            correlation: corr.to_vec(),
        }
    }

    #[test]
    fn codes_to_stats() {
        // feature 0 never active, feature 1 equals the labels
        let labels = [0.1f32, -0.3, 0.7, 0.0];
        let codes: Vec<f32> = labels.iter().flat_map(|&y| [0.0, y + 1.0]).collect();
        let s = stats_from_codes(&codes, 2, &labels);
        assert_eq!((s.frequency[0], s.correlation[0], s.count[0]), (0.0, 0.0, 0));
        assert!((s.correlation[1] - 1.0).abs() < 1e-9);
        assert_eq!(s.count[1], 4);
    }

    #[test]
    fn rare_features_are_filtered() {
        let s = stats(&[0.9, 0.8], &[9, 10], 100_000);
        assert!(!s.passes_filter(0));
        // 10 of 1e5 is exactly 0.01%, which is not above the threshold
        assert!(!s.passes_filter(1));
        let s = stats(&[0.9, 0.8], &[9, 10], 50_000);
        assert!(!s.passes_filter(0));
        assert!(s.passes_filter(1));
        assert_eq!(select_by_correlation(&s, 5), vec![1]);
        let none = stats(&[0.9], &[0], 100);
        assert!(select_by_correlation(&none, 3).is_empty());
    }

    #[test]
    fn correlation_ordering() {
        let s = stats(&[0.9, 0.1, 0.5], &[50, 50, 50], 100);
        assert_eq!(select_by_correlation(&s, 2), vec![0, 2]);
        assert_eq!(select_by_correlation(&s, 10), vec![0, 2, 1]);
        let tie = stats(&[0.4, 0.4], &[50, 50], 100);
        assert_eq!(select_by_correlation(&tie, 1), vec![0]);
    }

    #[test]
    fn impact_examples() {
        let mut m = SaeModel::<f32>::init(1, 2, 0.0, 0, Normalizer::identity(1)).unwrap();
        m.w_dec = vec![2.0, 1.0];
        let mut s = stats(&[0.0, 0.0], &[50, 50], 100);
        s.mean_activation = vec![1.0, 0.0];
        let ridge = RidgeModel {
            weights: vec![0.5],
            bias: 0.0,
            alpha: 1.0,
        };
        let imp = impact_scores(&m, &s, &ridge, &[3.0]).unwrap();
        assert_eq!(imp, vec![3.0, 0.0]);

        m.w_dec = vec![-5.0, 1.0];
        s.mean_activation = vec![1.0, 1.0];
        let one = RidgeModel { weights: vec![1.0], ..ridge.clone() };
        assert_eq!(select_by_impact(&m, &s, &one, &[1.0], 1).unwrap(), vec![0]);
        assert!(select_by_impact(&m, &s, &one, &[1.0, 1.0], 1).is_err());
    }

    #[test]
    fn union_dedups() {
        assert_eq!(select_union(&[vec![3, 1], vec![1, 2]]), vec![1, 2, 3]);
    }
}
