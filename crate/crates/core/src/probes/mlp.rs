use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ResidualPredictor;
use crate::error::{Error, Result};
use crate::linalg::{matmul_nn, matmul_nt, matmul_tn, Real};

/// Hidden widths of the full-size residual probe.
pub const DEFAULT_HIDDEN: [usize; 4] = [1024, 512, 256, 128];

/// Feed-forward regressor: affine layers with ReLU and inverted dropout
/// between them and a tanh on the single output unit.
///
/// Layer `l` maps `dims[l]` to `dims[l + 1]`; weights are `[out, in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    dims: Vec<usize>,
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    dropout_p: f64,
    seed: u64,
}

pub type MlpProbe = Mlp<f32>;

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

struct Cache<T> {
    /// Input to each layer (post-dropout for hidden layers).
    inputs: Vec<Vec<T>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<T>>,
    /// Per-unit dropout scale (0 or 1/(1-p)); empty in eval mode.
    masks: Vec<Vec<T>>,
    out: Vec<T>,
}

pub fn init_probe(d_in: usize, hidden: &[usize], dropout_p: f64, seed: u64) -> Result<MlpProbe> {
    Mlp::init(d_in, hidden, dropout_p, seed)
}

impl<T: Real> Mlp<T> {
    /// Deterministic init: every weight and bias uniform in ±1/sqrt(fan_in).
    pub fn init(d_in: usize, hidden: &[usize], dropout_p: f64, seed: u64) -> Result<Self> {
        if d_in == 0 {
            return Err(Error::BadWidth("input width must be positive".into()));
        }
        if let Some(w) = hidden.iter().find(|&&w| w == 0) {
            return Err(Error::BadWidth(format!("hidden width {w}")));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::BadConfig(format!("dropout {dropout_p} outside [0, 1)")));
        }
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(d_in);
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| T::of(rng.random_range(-bound..bound)))
                    .collect(),
            );
            biases.push(
                (0..fan_out)
                    .map(|_| T::of(rng.random_range(-bound..bound)))
                    .collect(),
            );
        }
        Ok(Self {
            dims,
            weights,
            biases,
            dropout_p,
            seed,
        })
    }

    pub fn from_parts(
        dims: Vec<usize>,
        weights: Vec<Vec<T>>,
        biases: Vec<Vec<T>>,
        dropout_p: f64,
        seed: u64,
    ) -> Result<Self> {
        if dims.len() < 2 || *dims.last().unwrap() != 1 || dims.contains(&0) {
            return Err(Error::BadWidth(format!("dims {dims:?}")));
        }
        let layers = dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::ShapeMismatch(format!(
                "{} weight / {} bias tensors for {layers} layers",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..layers {
            if weights[l].len() != dims[l] * dims[l + 1] || biases[l].len() != dims[l + 1] {
                return Err(Error::ShapeMismatch(format!("layer {l} tensor sizes")));
            }
        }
        Ok(Self {
            dims,
            weights,
            biases,
            dropout_p,
            seed,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn d_in(&self) -> usize {
        self.dims[0]
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[Vec<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Parameter tensors in `W0, b0, W1, b1, ...` order.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    /// Same architecture with every weight and bias set to zero.
    pub fn zeroed(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    fn forward_cached(&self, x: &[T], batch: usize, mut dropout: Option<&mut ChaCha8Rng>) -> Cache<T> {
        let layers = self.n_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        let mut masks = Vec::new();
        let mut a = x.to_vec();
        let keep_scale = T::of(1.0 / (1.0 - self.dropout_p));
        for l in 0..layers {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let mut z = vec![T::zero(); batch * dout];
            for row in z.chunks_exact_mut(dout) {
                row.copy_from_slice(&self.biases[l]);
            }
            matmul_nt(&a, &self.weights[l], batch, din, dout, &mut z, true);
            inputs.push(a);
            if l + 1 == layers {
                let out = z.iter().map(|v| v.tanh()).collect();
                return Cache {
                    inputs,
                    pre,
                    masks,
                    out,
                };
            }
            let mut h: Vec<T> = z.iter().map(|&v| v.max(T::zero())).collect();
            if let Some(rng) = dropout.as_deref_mut() {
                if self.dropout_p > 0.0 {
                    let mask: Vec<T> = (0..h.len())
                        .map(|_| {
                            if rng.random::<f64>() < self.dropout_p {
                                T::zero()
                            } else {
                                keep_scale
                            }
                        })
                        .collect();
                    h.iter_mut().zip(&mask).for_each(|(v, &m)| *v = *v * m);
                    masks.push(mask);
                }
            }
            pre.push(z);
            a = h;
        }
        unreachable!("network has at least one layer")
    }

    /// Batched forward over `[batch, d_in]`. `dropout` is `Some` only in training mode.
    pub fn forward_batch(&self, x: &[T], dropout: Option<&mut ChaCha8Rng>) -> Result<Vec<T>> {
        let d = self.d_in();
        if x.len() % d != 0 {
            return Err(Error::DimMismatch {
                expected: d,
                got: x.len() % d,
            });
        }
        Ok(self.forward_cached(x, x.len() / d, dropout).out)
    }

    pub fn forward(&self, x: &[T], train_mode: bool, rng: &mut ChaCha8Rng) -> Result<T> {
        if x.len() != self.d_in() {
            return Err(Error::DimMismatch {
                expected: self.d_in(),
                got: x.len(),
            });
        }
        let out = self.forward_batch(x, if train_mode { Some(rng) } else { None })?;
        Ok(out[0])
    }

    /// Loss `mean((r - r̂)²) + λ_out · mean(r̂²)` over a batch and its gradient.
    pub fn loss_and_grad(
        &self,
        x: &[T],
        targets: &[T],
        lambda_out: f64,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients<T>)> {
        let batch = targets.len();
        if x.len() != batch * self.d_in() {
            return Err(Error::LengthMismatch(x.len(), batch * self.d_in()));
        }
        let cache = self.forward_cached(x, batch, dropout);
        let n = batch as f64;
        let mut loss = 0.0;
        let lam = T::of(lambda_out);
        let two_over_n = T::of(2.0 / n);
        // gradient w.r.t. the tanh pre-activation
        let mut dz: Vec<T> = cache
            .out
            .iter()
            .zip(targets)
            .map(|(&y, &t)| {
                let e = y - t;
                loss += e.f64() * e.f64() + lambda_out * y.f64() * y.f64();
                let dy = two_over_n * (e + lam * y);
                dy * (T::one() - y * y)
            })
            .collect();
        loss /= n;

        let layers = self.n_layers();
        let mut gw: Vec<Vec<T>> = vec![Vec::new(); layers];
        let mut gb: Vec<Vec<T>> = vec![Vec::new(); layers];
        for l in (0..layers).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let mut w = vec![T::zero(); dout * din];
            matmul_tn(&dz, &cache.inputs[l], dout, batch, din, &mut w, false);
            let mut b = vec![T::zero(); dout];
            for row in dz.chunks_exact(dout) {
                b.iter_mut().zip(row).for_each(|(acc, &v)| *acc = *acc + v);
            }
            gw[l] = w;
            gb[l] = b;
            if l == 0 {
                break;
            }
            let mut da = vec![T::zero(); batch * din];
            matmul_nn(&dz, &self.weights[l], batch, dout, din, &mut da, false);
            if let Some(mask) = cache.masks.get(l - 1) {
                da.iter_mut().zip(mask).for_each(|(v, &m)| *v = *v * m);
            }
            for (v, &z) in da.iter_mut().zip(&cache.pre[l - 1]) {
                if z <= T::zero() {
                    *v = T::zero();
                }
            }
            dz = da;
        }
        Ok((
            loss,
            Gradients {
                weights: gw,
                biases: gb,
            },
        ))
    }
}

impl<T: Real> Gradients<T> {
    /// Tensors in `W0, b0, W1, b1, ...` order.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

impl MlpProbe {
    /// Eval-mode predictions in chunks to bound memory.
    pub fn predict(&self, rows: &[f32]) -> Result<Vec<f32>> {
        let d = self.d_in();
        if rows.len() % d != 0 {
            return Err(Error::DimMismatch {
                expected: d,
                got: rows.len() % d,
            });
        }
        let mut out = Vec::with_capacity(rows.len() / d);
        for chunk in rows.chunks(2048 * d) {
            out.extend(self.forward_batch(chunk, None)?);
        }
        Ok(out)
    }
}

impl ResidualPredictor for MlpProbe {
    fn d_in(&self) -> usize {
        self.dims[0]
    }

    fn predict_rows(&self, rows: &[f32]) -> Result<Vec<f32>> {
        self.predict(rows)
    }
}
