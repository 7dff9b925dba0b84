use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::MlpProbe;
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda_out: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            lambda_out: 0.0,
            batch_size: 256,
            max_epochs: 100,
            early_stop_patience: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.weight_decay >= 0.0
            && self.lambda_out >= 0.0
            && self.batch_size >= 1
            && self.max_epochs >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::BadConfig(format!("invalid training config {self:?}")))
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Normalized feature rows `[n, dim]` with one residual target per row.
#[derive(Debug, Clone, Copy)]
pub struct ProbeData<'a> {
    pub x: &'a [f32],
    pub y: &'a [f32],
    pub dim: usize,
}

impl<'a> ProbeData<'a> {
    pub fn new(x: &'a [f32], y: &'a [f32], dim: usize) -> Result<Self> {
        if dim == 0 || x.len() != y.len() * dim {
            return Err(Error::LengthMismatch(x.len(), y.len() * dim));
        }
        Ok(Self { x, y, dim })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Eval-mode training loss before the first update.
    pub initial_train_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_r2: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_r2(&self) -> f64 {
        self.val_r2[self.best_epoch]
    }

    /// `history.csv` contents.
    pub fn csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_r2,best\n");
        for e in 0..self.train_loss.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e,
                self.train_loss[e],
                self.val_loss[e],
                self.val_r2[e],
                u8::from(e == self.best_epoch)
            ));
        }
        s
    }
}

pub fn probe_loss(preds: &[f32], targets: &[f32], lambda_out: f64) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    let n = preds.len() as f64;
    let (mut mse, mut pen) = (0.0, 0.0);
    for (&p, &t) in preds.iter().zip(targets) {
        let (p, t) = (p as f64, t as f64);
        mse += (t - p) * (t - p);
        pen += p * p;
    }
    Ok(mse / n + lambda_out * pen / n)
}

pub fn r_squared(preds: &[f32], targets: &[f32]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch(preds.len(), targets.len()));
    }
    if targets.len() < 2 {
        return Err(Error::TooFewRows {
            need: 2,
            got: targets.len(),
        });
    }
    let mean = targets.iter().map(|&t| t as f64).sum::<f64>() / targets.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (&p, &t) in preds.iter().zip(targets) {
        ss_res += (t as f64 - p as f64).powi(2);
        ss_tot += (t as f64 - mean).powi(2);
    }
    if ss_tot <= 0.0 {
        return Err(Error::DegenerateTargets);
    }
    Ok(1.0 - ss_res / ss_tot)
}

fn gather(data: &ProbeData, idx: &[usize], xb: &mut Vec<f32>, yb: &mut Vec<f32>) {
    xb.clear();
    yb.clear();
    for &i in idx {
        xb.extend_from_slice(&data.x[i * data.dim..(i + 1) * data.dim]);
        yb.push(data.y[i]);
    }
}

/// Mini-batch AdamW on the output-penalized MSE, keeping the weights from the
/// epoch with the best validation R².
pub fn train(
    probe: MlpProbe,
    train_set: &ProbeData,
    val_set: &ProbeData,
    cfg: &TrainConfig,
) -> Result<(MlpProbe, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    for d in [train_set.dim, val_set.dim] {
        if d != probe.d_in() {
            return Err(Error::DimMismatch {
                expected: probe.d_in(),
                got: d,
            });
        }
    }

    let mut probe = probe;
    let mut opt = AdamW::<f32>::new(cfg.adamw(), &probe.param_sizes());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let initial = probe_loss(&probe.predict(train_set.x)?, train_set.y, cfg.lambda_out)?;
    let mut hist = TrainHistory {
        initial_train_loss: initial,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_r2: Vec::new(),
        best_epoch: 0,
    };
    let mut best = probe.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let (mut xb, mut yb) = (Vec::new(), Vec::new());

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            gather(train_set, idx, &mut xb, &mut yb);
            let (loss, grads) =
                probe.loss_and_grad(&xb, &yb, cfg.lambda_out, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            epoch_loss += loss * idx.len() as f64;
            opt.step(&mut probe.params_mut(), &grads.tensors());
        }
        let preds = probe.predict(val_set.x)?;
        let val_loss = probe_loss(&preds, val_set.y, cfg.lambda_out)?;
        let r2 = r_squared(&preds, val_set.y)?;
        if !val_loss.is_finite() || !r2.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        hist.train_loss.push(epoch_loss / train_set.len() as f64);
        hist.val_loss.push(val_loss);
        hist.val_r2.push(r2);
        if epoch == 0 || r2 > hist.val_r2[hist.best_epoch] {
            hist.best_epoch = epoch;
            best = probe.clone();
        } else if epoch - hist.best_epoch > cfg.early_stop_patience {
            break;
        }
    }
    Ok((best, hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::init_probe;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn loss_examples() {
        assert_eq!(probe_loss(&[0.3, -0.2], &[0.3, -0.2], 0.0).unwrap(), 0.0);
        assert!((probe_loss(&[0.5], &[0.0], 1.0).unwrap() - 0.5).abs() < 1e-12);
        for lam in [0.0, 0.3, 7.0] {
            assert_eq!(probe_loss(&[0.0, 0.0], &[1.0, -1.0], lam).unwrap(), 1.0);
        }
        assert!(matches!(probe_loss(&[0.0], &[0.0, 1.0], 0.0), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn loss_is_increasing_in_lambda() {
        let p = [0.1, -0.4, 0.25];
        let t = [0.0, 0.2, 0.5];
        let vals: Vec<f64> = [0.0, 0.01, 0.1, 1.0]
            .iter()
            .map(|&l| probe_loss(&p, &t, l).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn r2_examples() {
        assert_eq!(r_squared(&[0.0, 1.0, 3.0], &[0.0, 1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(r_squared(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(r_squared(&[0.0, 0.0], &[0.0, 1.0]).unwrap(), -1.0);
        assert!(matches!(r_squared(&[0.0, 1.0], &[1.0, 1.0]), Err(Error::DegenerateTargets)));
    }

    fn planted(n: usize, d: usize, seed: u64) -> (Vec<f32>, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f32> = (0..d).map(|i| if i < 4 { 0.15 } else { 0.0 }).collect();
        let x: Vec<f32> = (0..n * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let y = x
            .chunks(d)
            .map(|r| r.iter().zip(&u).map(|(a, b)| a * b).sum())
            .collect();
        (x, y)
    }

    #[test]
    fn learns_planted_linear_target() {
        let d = 8;
        let (xt, yt) = planted(512, d, 1);
        let (xv, yv) = planted(256, d, 2);
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            max_epochs: 60,
            ..Default::default()
        };
        let probe = init_probe(d, &[32, 16], 0.0, 0).unwrap();
        let train_set = ProbeData::new(&xt, &yt, d).unwrap();
        let val_set = ProbeData::new(&xv, &yv, d).unwrap();
        let (best, hist) = train(probe.clone(), &train_set, &val_set, &cfg).unwrap();
        assert!(hist.best_r2() > 0.9, "val r2 {}", hist.best_r2());
        assert!(hist.train_loss[hist.best_epoch] < hist.initial_train_loss);
        let r2 = r_squared(&best.predict(&xv).unwrap(), &yv).unwrap();
        assert_eq!(r2, hist.best_r2());

        let (_, again) = train(probe.clone(), &train_set, &val_set, &cfg).unwrap();
        assert_eq!(again, hist);

        let zero_epochs = TrainConfig {
            max_epochs: 0,
            ..cfg
        };
        assert!(matches!(
            train(probe.clone(), &train_set, &val_set, &zero_epochs),
            Err(Error::BadConfig(_))
        ));
        let empty = ProbeData::new(&[], &[], d).unwrap();
        assert!(matches!(train(probe, &empty, &val_set, &cfg), Err(Error::EmptyTrainSet)));
    }

    #[test]
    fn huge_learning_rate_diverges_or_degrades() {
        let d = 4;
        let (xt, yt) = planted(128, d, 3);
        let (xv, yv) = planted(64, d, 4);
        let cfg = TrainConfig {
            learning_rate: 1e30,
            max_epochs: 3,
            ..Default::default()
        };
        let probe = init_probe(d, &[8], 0.0, 0).unwrap();
        let res = train(
            probe,
            &ProbeData::new(&xt, &yt, d).unwrap(),
            &ProbeData::new(&xv, &yv, d).unwrap(),
            &cfg,
        );
        match res {
            Err(Error::DivergedLoss { .. }) => {}
            Ok((_, h)) => assert!(h.best_r2() < 0.5),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
