//! Probability steering from predicted residuals.
//!
//! Predictions for the options of one question are centered to sum to zero,
//! scaled by γ, added to the base probabilities, clamped at zero and
//! renormalized.

use serde::{Deserialize, Serialize};

use crate::dataset::{ActivationDataset, Normalizer};
use crate::error::{Error, Result};
use crate::labels::{softmax_scores, OptionProbs};
use crate::metrics::{argmax, report, CalibrationReport, EvalSet};
use crate::probes::ResidualPredictor;

/// What to return when every shifted entry clamps to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    #[default]
    Unsteered,
    Uniform,
}

impl std::str::FromStr for Fallback {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "unsteered" => Ok(Fallback::Unsteered),
            "uniform" => Ok(Fallback::Uniform),
            other => Err(format!("unknown fallback {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub gamma: f64,
    pub layer_id: i64,
    pub fallback: Fallback,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            layer_id: 0,
            fallback: Fallback::Unsteered,
        }
    }
}

/// γ ∈ {0.25, 0.5, …, 3.0}.
pub fn default_gamma_grid() -> Vec<f64> {
    (1..=12).map(|i| i as f64 * 0.25).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeredPrediction {
    pub qid: String,
    pub base_probs: Vec<f64>,
    pub centered_residuals: Vec<f64>,
    pub steered_probs: Vec<f64>,
    pub predicted: usize,
    pub correct: usize,
}

impl SteeredPrediction {
    /// One `steered.jsonl` line (without trailing newline).
    pub fn jsonl(&self) -> String {
        serde_json::json!({
            "qid": self.qid,
            "base_probs": self.base_probs,
            "steered_probs": self.steered_probs,
            "predicted": self.predicted,
            "correct": self.correct,
        })
        .to_string()
    }
}

pub fn center_residuals(r: &[f64]) -> Vec<f64> {
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    r.iter().map(|x| x - mean).collect()
}

pub fn steer_probs(
    p: &OptionProbs,
    centered: &[f64],
    gamma: f64,
    fallback: Fallback,
) -> Result<OptionProbs> {
    if p.len() != centered.len() {
        return Err(Error::LengthMismatch(p.len(), centered.len()));
    }
    if !gamma.is_finite()
        || p.0.iter().chain(centered).any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("steering input".into()));
    }
    if gamma == 0.0 {
        return Ok(p.clone());
    }
    let shifted: Vec<f64> = p
        .0
        .iter()
        .zip(centered)
        .map(|(&pj, &rj)| (pj + gamma * rj).max(0.0))
        .collect();
    let z: f64 = shifted.iter().sum();
    if z <= 0.0 {
        return Ok(match fallback {
            Fallback::Unsteered => p.clone(),
            Fallback::Uniform => OptionProbs::uniform(p.len()),
        });
    }
    Ok(OptionProbs(shifted.into_iter().map(|v| v / z).collect()))
}

/// Base probabilities and centered probe predictions, computed once per dataset.
#[derive(Debug, Clone)]
pub struct ProbeOutputs {
    pub qids: Vec<String>,
    pub base: Vec<OptionProbs>,
    pub centered: Vec<Vec<f64>>,
    pub correct: Vec<usize>,
}

pub fn probe_outputs(
    ds: &ActivationDataset,
    probe: &dyn ResidualPredictor,
    normalizer: &Normalizer,
    length_normalize: bool,
) -> Result<ProbeOutputs> {
    if probe.d_in() != ds.d_model() {
        return Err(Error::DimMismatch {
            expected: probe.d_in(),
            got: ds.d_model(),
        });
    }
    if normalizer.dim() != ds.d_model() {
        return Err(Error::DimMismatch {
            expected: normalizer.dim(),
            got: ds.d_model(),
        });
    }
    let z = normalizer.apply_rows(ds.activations())?;
    let preds = probe.predict_rows(&z)?;
    let n = ds.n_options();
    let mut out = ProbeOutputs {
        qids: Vec::with_capacity(ds.n_questions()),
        base: Vec::with_capacity(ds.n_questions()),
        centered: Vec::with_capacity(ds.n_questions()),
        correct: Vec::with_capacity(ds.n_questions()),
    };
    for (q, rec) in ds.records().iter().enumerate() {
        let r: Vec<f64> = preds[q * n..(q + 1) * n].iter().map(|&v| v as f64).collect();
        out.qids.push(rec.qid.clone());
        out.base
            .push(softmax_scores(&rec.log_scores, length_normalize, &rec.token_counts)?);
        out.centered.push(center_residuals(&r));
        out.correct.push(rec.correct);
    }
    Ok(out)
}

impl ProbeOutputs {
    pub fn steer(&self, gamma: f64, fallback: Fallback) -> Result<Vec<SteeredPrediction>> {
        (0..self.base.len())
            .map(|q| {
                let s = steer_probs(&self.base[q], &self.centered[q], gamma, fallback)?;
                Ok(SteeredPrediction {
                    qid: self.qids[q].clone(),
                    base_probs: self.base[q].0.clone(),
                    centered_residuals: self.centered[q].clone(),
                    predicted: argmax(&s.0),
                    steered_probs: s.0,
                    correct: self.correct[q],
                })
            })
            .collect()
    }

    pub fn base_eval(&self) -> Result<EvalSet> {
        EvalSet::new(
            self.base.iter().map(|p| p.0.clone()).collect(),
            self.correct.clone(),
        )
    }
}

pub fn steered_eval(preds: &[SteeredPrediction]) -> Result<EvalSet> {
    EvalSet::new(
        preds.iter().map(|p| p.steered_probs.clone()).collect(),
        preds.iter().map(|p| p.correct).collect(),
    )
}

pub fn steer_dataset(
    ds: &ActivationDataset,
    probe: &dyn ResidualPredictor,
    normalizer: &Normalizer,
    cfg: &SteeringConfig,
    length_normalize: bool,
) -> Result<Vec<SteeredPrediction>> {
    probe_outputs(ds, probe, normalizer, length_normalize)?.steer(cfg.gamma, cfg.fallback)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub gamma: f64,
    pub report: CalibrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweep {
    pub best_gamma: f64,
    pub rows: Vec<GammaRow>,
}

impl GammaSweep {
    pub fn best(&self) -> &GammaRow {
        self.rows
            .iter()
            .find(|r| r.gamma == self.best_gamma)
            .expect("best gamma is one of the rows")
    }

    /// `gammas.csv` contents.
    pub fn csv(&self) -> String {
        let mut s = String::from("gamma,accuracy,ece,cwece,brier,nll\n");
        for r in &self.rows {
            let [a, e, c, b, n] = r.report.headline();
            s.push_str(&format!("{},{a},{e},{c},{b},{n}\n", r.gamma));
        }
        s
    }
}

/// Lower Brier wins, then lower ECE.
fn better(a: &CalibrationReport, b: &CalibrationReport) -> bool {
    a.brier < b.brier || (a.brier == b.brier && a.ece < b.ece)
}

pub fn sweep_gamma_outputs(
    outputs: &ProbeOutputs,
    gammas: &[f64],
    fallback: Fallback,
    bins: usize,
) -> Result<GammaSweep> {
    if gammas.is_empty() {
        return Err(Error::EmptyInput("gamma grid"));
    }
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let preds = outputs.steer(gamma, fallback)?;
        rows.push(GammaRow {
            gamma,
            report: report(&steered_eval(&preds)?, bins)?,
        });
    }
    let mut best = 0;
    for i in 1..rows.len() {
        let (a, b) = (&rows[i], &rows[best]);
        if better(&a.report, &b.report)
            || (!better(&b.report, &a.report) && a.gamma < b.gamma)
        {
            best = i;
        }
    }
    Ok(GammaSweep {
        best_gamma: rows[best].gamma,
        rows,
    })
}

pub fn sweep_gamma(
    val: &ActivationDataset,
    probe: &dyn ResidualPredictor,
    normalizer: &Normalizer,
    gammas: &[f64],
    fallback: Fallback,
    bins: usize,
    length_normalize: bool,
) -> Result<GammaSweep> {
    let outputs = probe_outputs(val, probe, normalizer, length_normalize)?;
    sweep_gamma_outputs(&outputs, gammas, fallback, bins)
}

/// Pick the layer with the lowest validation Brier (ties: lower ECE, then lower id).
pub fn select_layer(reports: &[(i64, CalibrationReport)]) -> Result<i64> {
    let mut best = reports.first().ok_or(Error::EmptyInput("layer reports"))?;
    for r in &reports[1..] {
        if better(&r.1, &best.1) || (!better(&best.1, &r.1) && r.0 < best.0) {
            best = r;
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn centering_examples() {
        assert_eq!(center_residuals(&[1.0; 4]), vec![0.0; 4]);
        let zm = [0.5, -0.25, -0.25];
        assert_eq!(center_residuals(&zm), zm.to_vec());
        assert!(close(
            &center_residuals(&[0.8, 0.2, -0.2, -0.4]),
            &[0.7, 0.1, -0.3, -0.5],
            1e-12
        ));
    }

    #[test]
    fn steering_examples() {
        let p = OptionProbs(vec![0.5, 0.3, 0.2]);
        assert_eq!(steer_probs(&p, &[0.3, -0.1, -0.2], 0.0, Fallback::Unsteered).unwrap(), p);
        let s = steer_probs(&p, &[0.3, -0.1, -0.2], 1.0, Fallback::Unsteered).unwrap();
        assert!(close(&s.0, &[0.8, 0.2, 0.0], 1e-12));

        let p = OptionProbs(vec![0.1, 0.6, 0.3]);
        let s = steer_probs(&p, &[-0.2, 0.1, 0.1], 1.0, Fallback::Unsteered).unwrap();
        assert!(close(&s.0, &[0.0, 0.7 / 1.1, 0.4 / 1.1], 1e-12));
        assert!(close(&s.0, &[0.0, 0.63636, 0.36364], 1e-5));
    }

    #[test]
    fn all_clamped_uses_fallback() {
        // not a valid centered vector, but exercises the zero-denominator path
        let p = OptionProbs(vec![0.5, 0.5]);
        let r = [-1.0, -1.0];
        assert_eq!(steer_probs(&p, &r, 1.0, Fallback::Unsteered).unwrap(), p);
        assert_eq!(
            steer_probs(&p, &r, 1.0, Fallback::Uniform).unwrap(),
            OptionProbs::uniform(2)
        );
        assert!(steer_probs(&p, &[f64::NAN, 0.0], 1.0, Fallback::Uniform).is_err());
        assert!(steer_probs(&p, &[0.0, 0.0], f64::INFINITY, Fallback::Uniform).is_err());
    }

    #[test]
    fn layer_selection() {
        let rep = |brier: f64, ece: f64| CalibrationReport {
            n: 1,
            accuracy: 0.0,
            ece,
            cwece: 0.0,
            brier,
            nll: 0.0,
            nll_floored: 0,
            bin_count: 1,
            bins: vec![],
        };
        assert_eq!(select_layer(&[(7, rep(0.3, 0.1))]).unwrap(), 7);
        assert_eq!(select_layer(&[(1, rep(0.20, 0.1)), (2, rep(0.18, 0.1))]).unwrap(), 2);
        assert_eq!(select_layer(&[(5, rep(0.2, 0.1)), (3, rep(0.2, 0.1))]).unwrap(), 3);
        assert_eq!(select_layer(&[(5, rep(0.2, 0.05)), (3, rep(0.2, 0.1))]).unwrap(), 5);
        assert!(select_layer(&[]).is_err());
    }

    #[test]
    fn default_grid_has_twelve_values() {
        let g = default_gamma_grid();
        assert_eq!(g.len(), 12);
        assert_eq!((g[0], g[11]), (0.25, 3.0));
    }

    fn case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
        (2usize..7).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
                0.0f64..3.0,
                -5.0f64..5.0,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn steered_is_a_distribution((w, r, gamma, _c) in case()) {
            let z: f64 = w.iter().sum::<f64>() + 1e-9;
            let p = OptionProbs(w.iter().map(|v| (v + 1e-9 / w.len() as f64) / z).collect());
            let s = steer_probs(&p, &center_residuals(&r), gamma, Fallback::Unsteered).unwrap();
            prop_assert!(s.0.iter().all(|&v| v >= 0.0));
            prop_assert!((s.0.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn centering_removes_constant_shifts((w, r, gamma, c) in case()) {
            let z: f64 = w.iter().sum::<f64>() + 1e-9;
            let p = OptionProbs(w.iter().map(|v| (v + 1e-9 / w.len() as f64) / z).collect());
            let shifted: Vec<f64> = r.iter().map(|v| v + c).collect();
            let a = steer_probs(&p, &center_residuals(&r), gamma, Fallback::Unsteered).unwrap();
            let b = steer_probs(&p, &center_residuals(&shifted), gamma, Fallback::Unsteered).unwrap();
            prop_assert!(close(&a.0, &b.0, 1e-12));
        }

        #[test]
        fn no_clamp_is_linear((w, r, _g, _c) in case()) {
            let z: f64 = w.iter().sum::<f64>() + 1e-9;
            let p = OptionProbs(w.iter().map(|v| (v + 1e-9 / w.len() as f64) / z).collect());
            let rt = center_residuals(&r);
            // largest gamma that keeps every entry nonnegative
            let gmax = p.0.iter().zip(&rt)
                .filter(|(_, &x)| x < 0.0)
                .map(|(&pj, &x)| pj / -x)
                .fold(3.0f64, f64::min);
            let gamma = 0.5 * gmax;
            let s = steer_probs(&p, &rt, gamma, Fallback::Unsteered).unwrap();
            let lin: Vec<f64> = p.0.iter().zip(&rt).map(|(a, b)| a + gamma * b).collect();
            prop_assert!(close(&s.0, &lin, 1e-12));
        }
    }
}
