//! Option probabilities and residual-correctness targets.
//!
//! For option `j` with probability `p_j`, the residual is `1 - p_j` on the
//! correct option and `-p_j` elsewhere. Summing squared residuals gives the
//! per-question Brier score.

use crate::dataset::ActivationDataset;
use crate::error::{Error, Result};

/// A probability distribution over answer options.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionProbs(pub Vec<f64>);

impl OptionProbs {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn uniform(n: usize) -> Self {
        OptionProbs(vec![1.0 / n as f64; n])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTargets(pub Vec<f64>);

/// Stable softmax over option log-likelihoods, optionally divided by token counts first.
pub fn softmax_scores(
    log_scores: &[f64],
    length_normalize: bool,
    token_counts: &[u32],
) -> Result<OptionProbs> {
    if log_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("option log score".into()));
    }
    if length_normalize && token_counts.len() != log_scores.len() {
        return Err(Error::LengthMismatch(log_scores.len(), token_counts.len()));
    }
    let scaled: Vec<f64> = if length_normalize {
        log_scores
            .iter()
            .zip(token_counts)
            .map(|(&s, &c)| s / c.max(1) as f64)
            .collect()
    } else {
        log_scores.to_vec()
    };
    Ok(OptionProbs(softmax(&scaled)))
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn residual_labels(p: &OptionProbs, correct: usize) -> Result<ResidualTargets> {
    if correct >= p.len() {
        return Err(Error::IndexOutOfRange {
            index: correct,
            len: p.len(),
        });
    }
    Ok(ResidualTargets(
        p.0.iter()
            .enumerate()
            .map(|(j, &pj)| if j == correct { 1.0 - pj } else { -pj })
            .collect(),
    ))
}

pub fn brier_from_residuals(r: &ResidualTargets) -> f64 {
    r.0.iter().map(|x| x * x).sum()
}

/// Base probabilities and per-row residual targets for a whole dataset.
#[derive(Debug, Clone)]
pub struct DatasetLabels {
    pub probs: Vec<OptionProbs>,
    pub correct: Vec<usize>,
    /// One target per option row, in row order.
    pub residuals: Vec<f32>,
}

pub fn dataset_labels(ds: &ActivationDataset, length_normalize: bool) -> Result<DatasetLabels> {
    let mut probs = Vec::with_capacity(ds.n_questions());
    let mut correct = Vec::with_capacity(ds.n_questions());
    let mut residuals = Vec::with_capacity(ds.n_rows());
    for rec in ds.records() {
        let p = softmax_scores(&rec.log_scores, length_normalize, &rec.token_counts)?;
        residuals.extend(residual_labels(&p, rec.correct)?.0.iter().map(|&r| r as f32));
        probs.push(p);
        correct.push(rec.correct);
    }
    Ok(DatasetLabels {
        probs,
        correct,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{brier, EvalSet};
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_scores(&[0.0; 4], false, &[1; 4]).unwrap();
        assert!(close(&p.0, &[0.25; 4], 1e-15));
        let p = softmax_scores(&[2f64.ln(), 0.0], false, &[1, 1]).unwrap();
        assert!(close(&p.0, &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
        let p = softmax_scores(&[1000.0, 0.0], false, &[1, 1]).unwrap();
        assert!(p.0[0] > 1.0 - 1e-12 && p.0[1] < 1e-300 + 1e-12);
        assert!(p.0.iter().all(|v| v.is_finite()));
        assert!(softmax_scores(&[f64::NAN, 0.0], false, &[1, 1]).is_err());
    }

    #[test]
    fn length_normalization_divides_by_token_count() {
        let p = softmax_scores(&[-4.0, -1.0], true, &[4, 1]).unwrap();
        assert!(close(&p.0, &[0.5, 0.5], 1e-15));
        let raw = softmax_scores(&[-4.0, -1.0], false, &[4, 1]).unwrap();
        assert!(raw.0[1] > 0.9);
    }

    #[test]
    fn residual_examples() {
        let r = residual_labels(&OptionProbs(vec![0.7, 0.1, 0.1, 0.1]), 0).unwrap();
        assert!(close(&r.0, &[0.3, -0.1, -0.1, -0.1], 1e-12));
        let r = residual_labels(&OptionProbs::uniform(4), 2).unwrap();
        assert!(close(&r.0, &[-0.25, -0.25, 0.75, -0.25], 1e-15));
        let r = residual_labels(&OptionProbs(vec![0.0, 1.0, 0.0]), 1).unwrap();
        assert!(r.0.iter().all(|&x| x == 0.0));
        assert!(matches!(
            residual_labels(&OptionProbs::uniform(4), 4),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier_from_residuals(&ResidualTargets(vec![0.0; 4])), 0.0);
        let r = residual_labels(&OptionProbs::uniform(4), 0).unwrap();
        assert!((brier_from_residuals(&r) - 0.75).abs() < 1e-15);
        let r = ResidualTargets(vec![0.5, -0.5, 0.0, 0.0]);
        assert_eq!(brier_from_residuals(&r), 0.5);
    }

    fn probs_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
        (2usize..8).prop_flat_map(|n| {
            (prop::collection::vec(-20.0f64..20.0, n), 0..n)
                .prop_map(|(s, c)| (softmax(&s), c))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn residuals_sum_to_zero_and_decompose_brier((p, c) in probs_strategy()) {
            let r = residual_labels(&OptionProbs(p.clone()), c).unwrap();
            prop_assert!(r.0.iter().sum::<f64>().abs() < 1e-6);
            prop_assert!(r.0.iter().all(|x| (-1.0..=1.0).contains(x)));
            let ev = EvalSet::new(vec![p], vec![c]).unwrap();
            prop_assert!((brier_from_residuals(&r) - brier(&ev)).abs() < 1e-9);
        }
    }
}
