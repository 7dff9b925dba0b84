use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ResidualPredictor;
use crate::error::{Error, Result};

/// Linear model fit by ridge regression on mean-centered data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: f64,
}

impl RidgeModel {
    pub fn predict_one(&self, x: &[f32]) -> f64 {
        self.bias
            + self
                .weights
                .iter()
                .zip(x)
                .map(|(w, &v)| w * v as f64)
                .sum::<f64>()
    }

    pub fn predict(&self, rows: &[f32]) -> Vec<f64> {
        rows.chunks_exact(self.weights.len())
            .map(|r| self.predict_one(r))
            .collect()
    }
}

impl ResidualPredictor for RidgeModel {
    fn d_in(&self) -> usize {
        self.weights.len()
    }

    fn predict_rows(&self, rows: &[f32]) -> Result<Vec<f32>> {
        let d = self.weights.len();
        if rows.len() % d != 0 {
            return Err(Error::DimMismatch {
                expected: d,
                got: rows.len() % d,
            });
        }
        Ok(self.predict(rows).into_iter().map(|v| v as f32).collect())
    }
}

/// Solve `(XᵀX + αI) w = Xᵀy` on centered `X` (`[n, d]`) and `y` by Cholesky.
pub fn fit_ridge(x: &[f32], y: &[f32], d: usize, alpha: f64) -> Result<RidgeModel> {
    let n = y.len();
    if n == 0 {
        return Err(Error::EmptyInput("ridge rows"));
    }
    if d == 0 || x.len() != n * d {
        return Err(Error::LengthMismatch(x.len(), n * d));
    }
    if !(alpha >= 0.0) {
        return Err(Error::BadConfig(format!("ridge alpha {alpha}")));
    }
    let mut mean_x = vec![0.0f64; d];
    for r in x.chunks_exact(d) {
        mean_x.iter_mut().zip(r).for_each(|(m, &v)| *m += v as f64);
    }
    mean_x.iter_mut().for_each(|m| *m /= n as f64);
    let mean_y = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;

    let xc = DMatrix::from_fn(n, d, |i, j| x[i * d + j] as f64 - mean_x[j]);
    let yc = DVector::from_fn(n, |i, _| y[i] as f64 - mean_y);
    let mut gram = xc.tr_mul(&xc);
    for j in 0..d {
        gram[(j, j)] += alpha;
    }
    let rhs = xc.tr_mul(&yc);

    let max_diag = (0..d).map(|j| gram[(j, j)]).fold(0.0f64, f64::max);
    let chol = gram.cholesky().ok_or(Error::SingularSystem)?;
    let l = chol.l_dirty();
    let min_pivot = (0..d).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
    if max_diag <= 0.0 || min_pivot <= 1e-12 * max_diag {
        return Err(Error::SingularSystem);
    }
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let bias = mean_y - w.iter().zip(&mean_x).map(|(a, b)| a * b).sum::<f64>();
    Ok(RidgeModel {
        weights: w.iter().copied().collect(),
        bias,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn hand_solved_one_dimensional_case() {
        let m = fit_ridge(&[1.0, 2.0], &[1.0, 2.0], 1, 0.0).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!(m.bias.abs() < 1e-12);
    }

    #[test]
    fn recovers_exact_weights() {
        let (n, d) = (60, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w0 = [0.5, -1.25, 2.0, 0.0, 0.75];
        let x: Vec<f32> = (0..n * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        // build y in f32 from f32-exact products so the system is consistent
        let y: Vec<f32> = x
            .chunks(d)
            .map(|r| (r.iter().zip(&w0).map(|(a, b)| *a as f64 * b).sum::<f64>() + 0.5) as f32)
            .collect();
        let m = fit_ridge(&x, &y, d, 0.0).unwrap();
        for (a, b) in m.weights.iter().zip(&w0) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((m.bias - 0.5).abs() < 1e-6);
    }

    #[test]
    fn heavy_penalty_shrinks_to_zero() {
        let x = [1.0, 0.0, 0.0, 2.0, 3.0, 1.0];
        let y = [1.0, 2.0, 4.0];
        let m = fit_ridge(&x, &y, 2, 1e12).unwrap();
        let norm = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-6);
    }

    #[test]
    fn rank_deficient_without_penalty_is_singular() {
        // second column duplicates the first
        let x = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let y = [1.0, 2.0, 3.0];
        assert!(matches!(fit_ridge(&x, &y, 2, 0.0), Err(Error::SingularSystem)));
        assert!(fit_ridge(&x, &y, 2, 0.1).is_ok());
    }

    #[test]
    fn normal_equations_hold() {
        let (n, d) = (40, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f32> = (0..n * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let y: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let alpha = 0.7;
        let m = fit_ridge(&x, &y, d, alpha).unwrap();
        // independent check in plain loops on centered data
        let mx: Vec<f64> = (0..d)
            .map(|j| (0..n).map(|i| x[i * d + j] as f64).sum::<f64>() / n as f64)
            .collect();
        let my = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let xc = |i: usize, j: usize| x[i * d + j] as f64 - mx[j];
        let mut worst = 0.0f64;
        let mut xty_inf = 0.0f64;
        for a in 0..d {
            let xty: f64 = (0..n).map(|i| xc(i, a) * (y[i] as f64 - my)).sum();
            let lhs: f64 = (0..d)
                .map(|b| (0..n).map(|i| xc(i, a) * xc(i, b)).sum::<f64>() * m.weights[b])
                .sum::<f64>()
                + alpha * m.weights[a];
            worst = worst.max((lhs - xty).abs());
            xty_inf = xty_inf.max(xty.abs());
        }
        assert!(worst < 1e-6 * (1.0 + xty_inf));
    }
}
