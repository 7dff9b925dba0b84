//! Reference implementations shared by the oracle and acceptance tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Exact clamp-and-renormalize over rationals, centering included.
pub fn steer_exact(p: &[f64], r_hat: &[f64], gamma: f64) -> Vec<f64> {
    let n = BigRational::from_integer(BigInt::from(p.len()));
    let mean = r_hat.iter().map(|&v| rat(v)).fold(BigRational::zero(), |a, b| a + b) / n;
    let g = rat(gamma);
    let shifted: Vec<BigRational> = p
        .iter()
        .zip(r_hat)
        .map(|(&pj, &rj)| {
            let v = rat(pj) + g.clone() * (rat(rj) - mean.clone());
            if v < BigRational::zero() {
                BigRational::zero()
            } else {
                v
            }
        })
        .collect();
    let z = shifted.iter().fold(BigRational::zero(), |a, b| a + b);
    if z.is_zero() {
        return p.to_vec();
    }
    shifted.iter().map(|v| (v / &z).to_f64().unwrap()).collect()
}

pub fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn naive_bin(conf: f64, bins: usize) -> usize {
    (0..bins)
        .rev()
        .find(|&b| conf >= b as f64 / bins as f64)
        .unwrap_or(0)
}

fn naive_gap(pairs: &[(f64, f64)], bins: usize) -> f64 {
    let n = pairs.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        let members: Vec<&(f64, f64)> = pairs.iter().filter(|(c, _)| naive_bin(*c, bins) == b).collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let acc = members.iter().map(|(_, y)| y).sum::<f64>() / m;
        let conf = members.iter().map(|(c, _)| c).sum::<f64>() / m;
        total += m / n * (acc - conf).abs();
    }
    total
}

fn naive_argmax(p: &[f64]) -> usize {
    let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    p.iter().position(|&v| v == max).unwrap()
}

/// (accuracy, ECE, cwECE, Brier, NLL) by direct enumeration.
pub fn naive_metrics(probs: &[Vec<f64>], correct: &[usize], bins: usize) -> [f64; 5] {
    let n = probs.len() as f64;
    let k = probs[0].len();
    let hit = |j: usize, c: usize| if j == c { 1.0 } else { 0.0 };
    let acc = probs.iter().zip(correct).filter(|(p, &c)| naive_argmax(p) == c).count() as f64 / n;
    let top: Vec<(f64, f64)> = probs
        .iter()
        .zip(correct)
        .map(|(p, &c)| {
            let j = naive_argmax(p);
            (p[j], hit(j, c))
        })
        .collect();
    let cw = (0..k)
        .map(|class| {
            let pairs: Vec<(f64, f64)> = probs.iter().zip(correct).map(|(p, &c)| (p[class], hit(class, c))).collect();
            naive_gap(&pairs, bins)
        })
        .sum::<f64>()
        / k as f64;
    let brier = probs
        .iter()
        .zip(correct)
        .map(|(p, &c)| (0..k).map(|j| (p[j] - hit(j, c)).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    let nll = probs.iter().zip(correct).map(|(p, &c)| -p[c].max(1e-12).ln()).sum::<f64>() / n;
    [acc, naive_gap(&top, bins), cw, brier, nll]
}

/// Gaussian rows with variance `1/(i+1)` on coordinate `i`, so principal
/// components follow coordinate order, and a target spread evenly over the
/// first `signal_pcs` components plus a little noise.
pub fn spectrum_data(n: usize, d: usize, signal_pcs: usize, seed: u64) -> (Vec<f32>, Vec<f32>) {
    use rand::SeedableRng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        x.extend(g.iter().enumerate().map(|(i, v)| (v / ((i + 1) as f64).sqrt()) as f32));
        let s: f64 = g[..signal_pcs].iter().sum::<f64>() / (signal_pcs as f64).sqrt();
        let e: f64 = rng.sample(StandardNormal);
        y.push((s + 0.1 * e) as f32);
    }
    (x, y)
}
