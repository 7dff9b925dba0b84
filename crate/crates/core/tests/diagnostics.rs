mod support;

use rcsteer::dataset::{fit_normalizer, split_grouped, SplitSpec};
use rcsteer::diagnostics::{
    cumulative_signal, dimensionality_curve, layer_sweep_report, probe_heads, HeadActivationSet,
    HeadProbeConfig, HeadScore, LayerInput,
};
use rcsteer::labels::dataset_labels;
use rcsteer::pipeline::probe_inputs;
use rcsteer::probes::fit_ridge;
use rcsteer::steering::Fallback;
use rcsteer::synth::{gen_heads, gen_layer_stack, gen_task, SynthConfig};
use support::spectrum_data;

fn small_task(n: usize) -> rcsteer::synth::SynthTask {
    gen_task(&SynthConfig {
        n_questions: n,
        d_model: 32,
        signal_dims: 8,
        ..Default::default()
    })
    .unwrap()
}

fn head_cfg() -> HeadProbeConfig {
    let mut cfg = HeadProbeConfig {
        hidden: vec![32, 16],
        ..Default::default()
    };
    cfg.train.max_epochs = 30;
    cfg
}

#[test]
fn planted_heads_stand_out_from_noise() {
    let task = small_task(1000);
    let sets = gen_heads(task.dataset(), 2, 2, 8, &[(1, 0)], 5).unwrap();
    let labels = dataset_labels(task.dataset(), false).unwrap().residuals;
    let hs = HeadActivationSet::from_datasets(sets).unwrap();
    let cfg = head_cfg();
    let scores = probe_heads(&hs, &labels, &cfg).unwrap();
    assert_eq!(scores.len(), 4);
    for s in &scores {
        if (s.layer, s.head) == (1, 0) {
            assert!(s.r2 > 0.9, "{s:?}");
        } else {
            assert!(s.r2 < 0.05, "{s:?}");
        }
    }
    assert_eq!(cumulative_signal(&scores, 0.8).unwrap(), 1);
    assert_eq!(probe_heads(&hs, &labels, &cfg).unwrap(), scores);
}

#[test]
fn cumulative_signal_example() {
    let scores: Vec<HeadScore> = [0.5, 0.3, 0.2]
        .iter()
        .enumerate()
        .map(|(h, &r2)| HeadScore { layer: 0, head: h, r2 })
        .collect();
    assert_eq!(cumulative_signal(&scores, 0.8).unwrap(), 2);
}

fn curve(signal_pcs: usize, ks: &[usize]) -> Vec<f64> {
    let (n, d) = (2000, 100);
    let (x, y) = spectrum_data(n, d, signal_pcs, 7);
    let groups: Vec<usize> = (0..n).map(|r| r / 4).collect();
    dimensionality_curve(&x, &y, d, &groups, ks, 1.0, 5, 0).unwrap().r2
}

#[test]
fn single_component_signal_saturates_at_one() {
    let r2 = curve(1, &[1, 2, 5, 10, 50]);
    assert!(r2[0] > 0.95, "{r2:?}");
    for w in r2.windows(2) {
        assert!(w[1] <= r2[0] + 0.01, "{r2:?}");
    }
}

#[test]
fn spread_signal_grows_gradually() {
    let r2 = curve(50, &[1, 5, 10, 20, 50]);
    assert!(r2[1] < 0.6 * r2[4], "{r2:?}");
    assert!(r2.windows(2).all(|w| w[1] > w[0]), "{r2:?}");
    assert!(r2[4] > 0.9, "{r2:?}");
}

#[test]
fn layer_report_finds_the_signal_layer() {
    let cfg = SynthConfig {
        n_questions: 1500,
        d_model: 32,
        signal_dims: 8,
        ..Default::default()
    };
    let (_, layers) = gen_layer_stack(&cfg, 3, 2).unwrap();
    let spec = SplitSpec::new(0.7, 0.15, 0.15, 0).unwrap();
    let mut parts = Vec::new();
    for ds in &layers {
        let (train, _, test) = split_grouped(ds, &spec).unwrap();
        let norm = fit_normalizer(&train).unwrap();
        let (x, y) = probe_inputs(&train, &norm, false).unwrap();
        parts.push((test, fit_ridge(&x, &y, 32, 1.0).unwrap(), norm));
    }
    let inputs: Vec<LayerInput> = parts
        .iter()
        .map(|(ds, p, n)| LayerInput {
            dataset: ds,
            probe: p,
            normalizer: n,
        })
        .collect();
    let rep = layer_sweep_report(&inputs, 1.0, Fallback::Unsteered, 25, false).unwrap();
    assert_eq!(rep.rows.len(), 3);
    assert_eq!(rep.best_gain_layer(), Some(2));
    let r = &rep.rows[2];
    assert!(r.acc > r.base_acc, "{r:?}");
}
