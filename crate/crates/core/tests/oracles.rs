//! Independent reference implementations checked against the library.

mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcsteer::labels::OptionProbs;
use rcsteer::metrics::{self, EvalSet};
use rcsteer::steering::{center_residuals, steer_probs, Fallback};
use support::{naive_metrics, random_probs, steer_exact};

#[test]
fn steering_matches_exact_rationals() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..=6);
        let p = random_probs(&mut rng, n);
        let r_hat: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gamma = rng.random_range(0.0..3.0);
        let got = steer_probs(&OptionProbs(p.clone()), &center_residuals(&r_hat), gamma, Fallback::Unsteered)
            .unwrap();
        let want = steer_exact(&p, &r_hat, gamma);
        for (a, b) in got.0.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-9, "max abs diff {worst}");
}

#[test]
fn steering_hand_cases() {
    let p = OptionProbs(vec![0.1, 0.6, 0.3]);
    let out = steer_probs(&p, &[-0.2, 0.1, 0.1], 1.0, Fallback::Unsteered).unwrap();
    for (a, b) in out.0.iter().zip([0.0, 7.0 / 11.0, 4.0 / 11.0]) {
        assert!((a - b).abs() < 1e-6);
    }
    assert_eq!(steer_probs(&p, &[-0.2, 0.1, 0.1], 0.0, Fallback::Unsteered).unwrap(), p);
}

#[test]
fn metrics_match_naive_references() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let bins = 25;
    for _ in 0..100 {
        let probs: Vec<Vec<f64>> = (0..1000).map(|_| random_probs(&mut rng, 4)).collect();
        let correct: Vec<usize> = (0..1000).map(|_| rng.random_range(0..4)).collect();
        let ev = EvalSet::new(probs.clone(), correct.clone()).unwrap();
        let want = naive_metrics(&probs, &correct, bins);
        let got = [
            metrics::accuracy(&ev),
            metrics::ece(&ev, bins),
            metrics::cwece(&ev, bins).unwrap(),
            metrics::brier(&ev),
            metrics::nll(&ev),
        ];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn metric_hand_cases() {
    let uniform = EvalSet::new(vec![vec![0.25; 4]; 3], vec![0, 2, 3]).unwrap();
    assert_eq!(metrics::brier(&uniform), 0.75);
    let one = EvalSet::new(vec![vec![0.8, 0.2]], vec![1]).unwrap();
    assert_eq!(metrics::ece(&one, 25), 0.8);
    let cw = EvalSet::new(vec![vec![0.7, 0.3]], vec![0]).unwrap();
    assert!((metrics::cwece(&cw, 25).unwrap() - 0.3).abs() < 1e-15);
}
