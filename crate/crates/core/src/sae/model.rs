use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Normalizer;
use crate::error::{Error, Result};
use crate::linalg::{matmul_nn, matmul_nt, matmul_tn, Real};
use crate::optim::{AdamW, AdamWConfig};
use crate::par::map_indexed;

/// `f = ReLU(W_enc z + b_enc)`, `ẑ = W_dec f + b_dec`.
///
/// `w_enc` is `[D, d]` and `w_dec` is `[d, D]`, both row-major, so decoder
/// column `j` is the strided slice `w_dec[i * D + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel<T> {
    pub d: usize,
    pub n_features: usize,
    pub w_enc: Vec<T>,
    pub b_enc: Vec<T>,
    pub w_dec: Vec<T>,
    pub b_dec: Vec<T>,
    pub lambda: f64,
    pub seed: u64,
    pub normalizer: Normalizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeGradients<T> {
    pub w_enc: Vec<T>,
    pub b_enc: Vec<T>,
    pub w_dec: Vec<T>,
    pub b_dec: Vec<T>,
}

impl<T> SaeGradients<T> {
    pub fn tensors(&self) -> [&[T]; 4] {
        [&self.w_enc, &self.b_enc, &self.w_dec, &self.b_dec]
    }
}

const ROW_BLOCK: usize = 512;

impl<T: Real> SaeModel<T> {
    /// Uniform ±1/sqrt(fan_in) init, as for probes.
    pub fn init(d: usize, n_features: usize, lambda: f64, seed: u64, normalizer: Normalizer) -> Result<Self> {
        if d == 0 || n_features == 0 {
            return Err(Error::BadWidth(format!("sae {d} -> {n_features}")));
        }
        if normalizer.dim() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: normalizer.dim(),
            });
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::BadConfig(format!("lambda {lambda}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<T> {
            let b = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| T::of(rng.random_range(-b..b))).collect()
        };
        let w_enc = draw(n_features * d, d);
        let b_enc = draw(n_features, d);
        let w_dec = draw(d * n_features, n_features);
        let b_dec = draw(d, n_features);
        Ok(Self {
            d,
            n_features,
            w_enc,
            b_enc,
            w_dec,
            b_dec,
            lambda,
            seed,
            normalizer,
        })
    }

    pub fn param_sizes(&self) -> [usize; 4] {
        [self.w_enc.len(), self.b_enc.len(), self.w_dec.len(), self.b_dec.len()]
    }

    pub fn params(&self) -> [&[T]; 4] {
        [&self.w_enc, &self.b_enc, &self.w_dec, &self.b_dec]
    }

    pub fn params_mut(&mut self) -> [&mut [T]; 4] {
        [
            &mut self.w_enc,
            &mut self.b_enc,
            &mut self.w_dec,
            &mut self.b_dec,
        ]
    }

    pub fn decoder_column(&self, j: usize) -> Vec<T> {
        (0..self.d).map(|i| self.w_dec[i * self.n_features + j]).collect()
    }

    /// Appends features: `enc` is `[k, d]`, `dec` is `[k, d]` (one decoder
    /// column per row). Returns the index of the first new feature.
    pub fn append_features(&mut self, enc: &[T], b_enc: &[T], dec: &[T]) -> Result<usize> {
        let k = b_enc.len();
        self.check_dim(enc.len(), k * self.d)?;
        self.check_dim(dec.len(), k * self.d)?;
        let (d, old) = (self.d, self.n_features);
        let nf = old + k;
        let mut w_dec = Vec::with_capacity(d * nf);
        for i in 0..d {
            w_dec.extend_from_slice(&self.w_dec[i * old..(i + 1) * old]);
            w_dec.extend((0..k).map(|j| dec[j * d + i]));
        }
        self.w_enc.extend_from_slice(enc);
        self.b_enc.extend_from_slice(b_enc);
        self.w_dec = w_dec;
        self.n_features = nf;
        Ok(old)
    }

    pub fn decoder_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0f64; self.n_features];
        for row in self.w_dec.chunks(self.n_features) {
            for (s, &w) in sq.iter_mut().zip(row) {
                *s += w.f64() * w.f64();
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    fn check_dim(&self, got: usize, expected: usize) -> Result<()> {
        if got == expected {
            Ok(())
        } else {
            Err(Error::DimMismatch { expected, got })
        }
    }

    pub fn encode(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_dim(z.len(), self.d)?;
        Ok(self.encode_block(z, 1))
    }

    pub fn decode(&self, f: &[T]) -> Result<Vec<T>> {
        self.check_dim(f.len(), self.n_features)?;
        Ok(self.decode_block(f, 1))
    }

    fn encode_block(&self, z: &[T], rows: usize) -> Vec<T> {
        let mut f = Vec::with_capacity(rows * self.n_features);
        for _ in 0..rows {
            f.extend_from_slice(&self.b_enc);
        }
        matmul_nt(z, &self.w_enc, rows, self.d, self.n_features, &mut f, true);
        for v in f.iter_mut() {
            *v = v.max(T::zero());
        }
        f
    }

    fn decode_block(&self, f: &[T], rows: usize) -> Vec<T> {
        let mut z = Vec::with_capacity(rows * self.d);
        for _ in 0..rows {
            z.extend_from_slice(&self.b_dec);
        }
        matmul_nt(f, &self.w_dec, rows, self.n_features, self.d, &mut z, true);
        z
    }

    /// Encodes row-major `[N, d]` data, parallel over row blocks.
    pub fn encode_rows(&self, z: &[T]) -> Result<Vec<T>> {
        if z.len() % self.d != 0 {
            return Err(Error::DimMismatch {
                expected: self.d,
                got: z.len() % self.d,
            });
        }
        let rows = z.len() / self.d;
        let blocks = rows.div_ceil(ROW_BLOCK);
        let parts = map_indexed(blocks, |b| {
            let lo = b * ROW_BLOCK;
            let hi = (lo + ROW_BLOCK).min(rows);
            self.encode_block(&z[lo * self.d..hi * self.d], hi - lo)
        });
        Ok(parts.concat())
    }

    pub fn decode_rows(&self, f: &[T]) -> Result<Vec<T>> {
        if f.len() % self.n_features != 0 {
            return Err(Error::DimMismatch {
                expected: self.n_features,
                got: f.len() % self.n_features,
            });
        }
        let rows = f.len() / self.n_features;
        let blocks = rows.div_ceil(ROW_BLOCK);
        let parts = map_indexed(blocks, |b| {
            let lo = b * ROW_BLOCK;
            let hi = (lo + ROW_BLOCK).min(rows);
            self.decode_block(&f[lo * self.n_features..hi * self.n_features], hi - lo)
        });
        Ok(parts.concat())
    }

    /// Per-sample loss `‖z − ẑ‖² + λ Σ_j |f_j|·‖d_j‖`.
    pub fn loss(&self, z: &[T], f: &[T], z_hat: &[T]) -> f64 {
        let recon: f64 = z
            .iter()
            .zip(z_hat)
            .map(|(&a, &b)| (a.f64() - b.f64()).powi(2))
            .sum();
        if self.lambda == 0.0 {
            return recon;
        }
        let norms = self.decoder_norms();
        let pen: f64 = f.iter().zip(&norms).map(|(v, n)| v.f64().abs() * n).sum();
        recon + self.lambda * pen
    }

    /// Batch-mean loss split as (total, reconstruction, penalty) plus
    /// gradients of the total. Decoder norms are differentiated through.
    pub fn loss_and_grad(&self, z: &[T]) -> Result<((f64, f64, f64), SaeGradients<T>)> {
        if z.is_empty() || z.len() % self.d != 0 {
            return Err(Error::DimMismatch {
                expected: self.d,
                got: z.len(),
            });
        }
        let (d, nf) = (self.d, self.n_features);
        let b = z.len() / d;
        let inv_b = T::of(1.0 / b as f64);
        let lam = T::of(self.lambda);

        let f = self.encode_block(z, b);
        let z_hat = self.decode_block(&f, b);
        let norms = self.decoder_norms();

        let mut g_hat = vec![T::zero(); b * d];
        let mut recon = 0.0;
        for k in 0..b * d {
            let e = z_hat[k] - z[k];
            recon += e.f64() * e.f64();
            g_hat[k] = (e + e) * inv_b;
        }
        let mut f_sum = vec![0.0f64; nf];
        for row in f.chunks(nf) {
            for (s, &v) in f_sum.iter_mut().zip(row) {
                *s += v.f64();
            }
        }
        let penalty: f64 = f_sum.iter().zip(&norms).map(|(s, n)| s * n).sum::<f64>() * self.lambda;
        recon /= b as f64;
        let penalty = penalty / b as f64;

        // decoder
        let mut w_dec = vec![T::zero(); d * nf];
        matmul_tn(&g_hat, &f, d, b, nf, &mut w_dec, false);
        if self.lambda != 0.0 {
            let coef: Vec<T> = f_sum
                .iter()
                .zip(&norms)
                .map(|(s, &n)| if n > 0.0 { T::of(self.lambda * s / (b as f64 * n)) } else { T::zero() })
                .collect();
            for (g_row, w_row) in w_dec.chunks_mut(nf).zip(self.w_dec.chunks(nf)) {
                for j in 0..nf {
                    g_row[j] = g_row[j] + coef[j] * w_row[j];
                }
            }
        }
        let mut b_dec = vec![T::zero(); d];
        for row in g_hat.chunks(d) {
            for (s, &v) in b_dec.iter_mut().zip(row) {
                *s = *s + v;
            }
        }

        // back through the code; f ≥ 0 so |f| = f and the ReLU mask is f > 0
        let mut g_pre = vec![T::zero(); b * nf];
        matmul_nn(&g_hat, &self.w_dec, b, d, nf, &mut g_pre, false);
        let pen_grad: Vec<T> = norms.iter().map(|&n| lam * T::of(n) * inv_b).collect();
        for (g_row, f_row) in g_pre.chunks_mut(nf).zip(f.chunks(nf)) {
            for j in 0..nf {
                g_row[j] = if f_row[j] > T::zero() {
                    g_row[j] + pen_grad[j]
                } else {
                    T::zero()
                };
            }
        }
        let mut w_enc = vec![T::zero(); nf * d];
        matmul_tn(&g_pre, z, nf, b, d, &mut w_enc, false);
        let mut b_enc = vec![T::zero(); nf];
        for row in g_pre.chunks(nf) {
            for (s, &v) in b_enc.iter_mut().zip(row) {
                *s = *s + v;
            }
        }
        Ok((
            (recon + penalty, recon, penalty),
            SaeGradients {
                w_enc,
                b_enc,
                w_dec,
                b_dec,
            },
        ))
    }
}

impl SaeModel<f32> {
    /// Reconstruction mean squared error per dimension over row-major data.
    pub fn reconstruction_mse(&self, z: &[f32]) -> Result<f64> {
        let f = self.encode_rows(z)?;
        let z_hat = self.decode_rows(&f)?;
        let sse: f64 = z
            .iter()
            .zip(&z_hat)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        Ok(sse / z.len().max(1) as f64)
    }

    /// Mean number of active (> 0) code entries per row.
    pub fn mean_l0(&self, z: &[f32]) -> Result<f64> {
        let f = self.encode_rows(z)?;
        let active = f.iter().filter(|&&v| v > 0.0).count();
        Ok(active as f64 / (z.len() / self.d).max(1) as f64)
    }
}

/// Conventional defaults; they converge on the synthetic tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaeTrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 256,
            epochs: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeHistory {
    pub loss: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub penalty: Vec<f64>,
}

impl SaeHistory {
    pub fn csv(&self) -> String {
        let mut s = String::from("epoch,loss,reconstruction,penalty\n");
        for (e, ((l, r), p)) in self
            .loss
            .iter()
            .zip(&self.reconstruction)
            .zip(&self.penalty)
            .enumerate()
        {
            s.push_str(&format!("{e},{l},{r},{p}\n"));
        }
        s
    }
}

/// Mini-batch AdamW on the penalized reconstruction loss. Single-threaded and
/// deterministic under `cfg.seed`; the final model is returned.
pub fn train_sae(
    data: &[f32],
    normalizer: &Normalizer,
    expansion: usize,
    lambda: f64,
    cfg: &SaeTrainConfig,
) -> Result<(SaeModel<f32>, SaeHistory)> {
    let d = normalizer.dim();
    if expansion == 0 {
        return Err(Error::BadConfig("expansion must be positive".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::BadConfig(format!("invalid sae config {cfg:?}")));
    }
    if data.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if d == 0 || data.len() % d != 0 {
        return Err(Error::DimMismatch {
            expected: d,
            got: data.len() % d.max(1),
        });
    }
    let n = data.len() / d;
    let mut model = SaeModel::<f32>::init(d, d * expansion, lambda, cfg.seed, normalizer.clone())?;
    let mut opt = AdamW::<f32>::new(
        AdamWConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &model.param_sizes(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size * d);
    let mut hist = SaeHistory {
        loss: Vec::new(),
        reconstruction: Vec::new(),
        penalty: Vec::new(),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut tl, mut tr, mut tp) = (0.0, 0.0, 0.0);
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            for &i in idx {
                batch.extend_from_slice(&data[i * d..(i + 1) * d]);
            }
            let ((l, r, p), grads) = model.loss_and_grad(&batch)?;
            if !l.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            let w = idx.len() as f64;
            tl += l * w;
            tr += r * w;
            tp += p * w;
            opt.step(&mut model.params_mut(), &grads.tensors());
        }
        hist.loss.push(tl / n as f64);
        hist.reconstruction.push(tr / n as f64);
        hist.penalty.push(tp / n as f64);
    }
    Ok((model, hist))
}
