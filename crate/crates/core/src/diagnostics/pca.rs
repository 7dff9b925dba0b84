use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::grouped_folds;
use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::probes::{fit_ridge, r_squared};

pub const DEFAULT_RIDGE_ALPHA: f64 = 1.0;

/// Principal axes of mean-centered data, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// `[k, dim]` row-major, orthonormal rows.
    pub components: Vec<f64>,
    pub explained_ratio: Vec<f64>,
}

impl Pca {
    pub fn k(&self) -> usize {
        self.explained_ratio.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    /// Scores on the first `k` components, `[N, k]` row-major.
    pub fn project(&self, x: &[f32], k: usize) -> Vec<f64> {
        let k = k.min(self.k());
        let mut out = Vec::with_capacity(x.len() / self.dim * k);
        let mut centered = vec![0.0; self.dim];
        for row in x.chunks(self.dim) {
            for (c, (&v, m)) in centered.iter_mut().zip(row.iter().zip(&self.mean)) {
                *c = v as f64 - m;
            }
            for i in 0..k {
                out.push(self.component(i).iter().zip(&centered).map(|(a, b)| a * b).sum());
            }
        }
        out
    }

    pub fn reconstruct(&self, scores: &[f64], k: usize) -> Vec<f64> {
        let k = k.min(self.k());
        let mut out = Vec::with_capacity(scores.len() / k.max(1) * self.dim);
        for row in scores.chunks(k) {
            for j in 0..self.dim {
                let v: f64 = (0..k).map(|i| row[i] * self.components[i * self.dim + j]).sum();
                out.push(v + self.mean[j]);
            }
        }
        out
    }
}

/// PCA via eigendecomposition of the sample covariance. Ratios are fractions
/// of total variance, so they sum to at most one over the kept components.
pub fn pca_fit(x: &[f32], dim: usize, k_max: usize) -> Result<Pca> {
    let n = if dim == 0 { 0 } else { x.len() / dim };
    if n < 2 {
        return Err(Error::DegenerateData(format!("{n} rows")));
    }
    let mut mean = vec![0.0f64; dim];
    for row in x.chunks(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered: Vec<f64> = x
        .chunks(dim)
        .flat_map(|row| row.iter().zip(&mean).map(|(&v, m)| v as f64 - m))
        .collect();
    let mut cov = vec![0.0f64; dim * dim];
    crate::linalg::matmul_tn(&centered, &centered, dim, n, dim, &mut cov, false);
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);

    let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &cov));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateData("zero total variance".into()));
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let k = k_max.min(dim);
    let mut components = Vec::with_capacity(k * dim);
    let mut explained_ratio = Vec::with_capacity(k);
    for &i in &order[..k] {
        let col = eig.eigenvectors.column(i);
        // sign convention: largest-magnitude entry positive
        let pivot = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| v * s));
        explained_ratio.push(eig.eigenvalues[i].max(0.0) / total);
    }
    Ok(Pca {
        dim,
        mean,
        components,
        explained_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimCurve {
    pub ks: Vec<usize>,
    pub r2: Vec<f64>,
    pub cum_var: Vec<f64>,
}

impl DimCurve {
    pub fn csv(&self) -> String {
        let mut s = String::from("k,r2,cum_var\n");
        for ((k, r), c) in self.ks.iter().zip(&self.r2).zip(&self.cum_var) {
            s.push_str(&format!("{k},{r},{c}\n"));
        }
        s
    }
}

/// Cross-validated ridge R² on the top-k principal components, for each k.
///
/// `groups[row]` names the question a row belongs to; folds are drawn over
/// questions and PCA is refitted on each training split.
#[allow(clippy::too_many_arguments)]
pub fn dimensionality_curve(
    x: &[f32],
    y: &[f32],
    dim: usize,
    groups: &[usize],
    ks: &[usize],
    ridge_alpha: f64,
    folds: usize,
    seed: u64,
) -> Result<DimCurve> {
    let n = y.len();
    if x.len() != n * dim {
        return Err(Error::LengthMismatch(x.len() / dim.max(1), n));
    }
    if groups.len() != n {
        return Err(Error::LengthMismatch(groups.len(), n));
    }
    if ks.is_empty() {
        return Err(Error::EmptyInput("component counts"));
    }
    let k_max = *ks.iter().max().unwrap();
    if ks.contains(&0) || k_max > dim.min(n.saturating_sub(1)) {
        return Err(Error::BadConfig(format!(
            "component counts {ks:?} must lie in 1..={}",
            dim.min(n.saturating_sub(1))
        )));
    }
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    let fold_of = grouped_folds(n_groups, folds, seed)?;

    let per_fold = map_indexed(folds, |fold| -> Result<Vec<f64>> {
        let (mut xt, mut yt, mut xh, mut yh) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for r in 0..n {
            let row = &x[r * dim..(r + 1) * dim];
            if fold_of[groups[r]] == fold {
                xh.extend_from_slice(row);
                yh.push(y[r]);
            } else {
                xt.extend_from_slice(row);
                yt.push(y[r]);
            }
        }
        let pca = pca_fit(&xt, dim, k_max)?;
        let pt = pca.project(&xt, k_max);
        let ph = pca.project(&xh, k_max);
        ks.iter()
            .map(|&k| {
                let take = |p: &[f64]| -> Vec<f32> {
                    p.chunks(k_max).flat_map(|r| r[..k].iter().map(|&v| v as f32)).collect()
                };
                let model = fit_ridge(&take(&pt), &yt, k, ridge_alpha)?;
                let pred: Vec<f32> = model.predict(&take(&ph)).iter().map(|&v| v as f32).collect();
                r_squared(&pred, &yh)
            })
            .collect()
    });
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;
    let r2 = (0..ks.len())
        .map(|i| per_fold.iter().map(|f| f[i]).sum::<f64>() / folds as f64)
        .collect();

    let full = pca_fit(x, dim, k_max)?;
    let mut cum = Vec::with_capacity(k_max);
    let mut acc = 0.0;
    for r in &full.explained_ratio {
        acc += r;
        cum.push(acc);
    }
    Ok(DimCurve {
        ks: ks.to_vec(),
        r2,
        cum_var: ks.iter().map(|&k| cum[k - 1]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn rank_one_line() {
        let x: Vec<f32> = (0..50)
            .flat_map(|i| {
                let t = i as f32 * 0.1 - 2.0;
                [t, 2.0 * t, -t]
            })
            .collect();
        let p = pca_fit(&x, 3, 3).unwrap();
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn isotropic_and_orthonormal() {
        let x = gaussian(20_000, 2, 1);
        let p = pca_fit(&x, 2, 2).unwrap();
        for r in &p.explained_ratio {
            assert!((r - 0.5).abs() < 0.05);
        }
        let x = gaussian(500, 7, 2);
        let p = pca_fit(&x, 7, 7).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let dot: f64 = p.component(i).iter().zip(p.component(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-5);
            }
        }
        assert!(p.explained_ratio.iter().sum::<f64>() <= 1.0 + 1e-6);
        assert!(p.explained_ratio.windows(2).all(|w| w[0] >= w[1]));
        let back = p.reconstruct(&p.project(&x, 7), 7);
        for (a, b) in x.iter().zip(&back) {
            assert!((*a as f64 - b).abs() < 1e-4);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(pca_fit(&[1.0, 2.0], 2, 1), Err(Error::DegenerateData(_))));
        assert!(matches!(pca_fit(&[1.0, 1.0, 1.0, 1.0], 2, 1), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn curve_shapes() {
        let (n, d) = (1200, 10);
        // anisotropic data so PC1 is the first coordinate
        let mut x = gaussian(n, d, 3);
        for row in x.chunks_mut(d) {
            row[0] *= 4.0;
        }
        let groups: Vec<usize> = (0..n).map(|r| r / 4).collect();
        let y: Vec<f32> = x.chunks(d).map(|r| 0.1 * r[0]).collect();
        let ks = [1, 2, 5, 10];
        let c = dimensionality_curve(&x, &y, d, &groups, &ks, 1.0, 5, 0).unwrap();
        assert!(c.r2[0] > 0.99, "{:?}", c.r2);
        assert!(c.cum_var.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert!(*c.cum_var.last().unwrap() <= 1.0 + 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let c = dimensionality_curve(&x, &noise, d, &groups, &ks, 1.0, 5, 0).unwrap();
        assert!(c.r2.iter().all(|&r| r.abs() < 0.05), "{:?}", c.r2);
        assert!(dimensionality_curve(&x, &y, d, &groups, &[11], 1.0, 5, 0).is_err());
    }
}
