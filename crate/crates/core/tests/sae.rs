use rcsteer::dataset::{fit_normalizer, split_grouped, Normalizer, SplitSpec};
use rcsteer::labels::dataset_labels;
use rcsteer::sae::{
    ablation_sweep, feature_stats, load_sae, save_sae, select_by_correlation, train_sae, SaeTrainConfig,
};
use rcsteer::synth::{gen_planted_dictionary, gen_task, SynthConfig};

fn planted(n: usize) -> (Normalizer, Vec<f32>) {
    let (rows, _) = gen_planted_dictionary(n, 64, 256, 8, 0).unwrap();
    let norm = Normalizer::fit_rows(&rows, 64, "planted").unwrap();
    let z = norm.apply_rows(&rows).unwrap();
    (norm, z)
}

#[test]
fn planted_dictionary_is_reconstructed() {
    let (norm, z) = planted(8000);
    let (train, held) = z.split_at(6000 * 64);
    let cfg = SaeTrainConfig {
        epochs: 100,
        ..Default::default()
    };
    let (m, hist) = train_sae(train, &norm, 4, 0.1, &cfg).unwrap();
    let mse = m.reconstruction_mse(held).unwrap();
    assert!(mse < 0.05, "held-out mse {mse}");
    assert!(hist.loss.last().unwrap() < hist.loss.first().unwrap());
}

#[test]
fn stronger_penalty_gives_sparser_codes() {
    let (norm, z) = planted(3000);
    let cfg = SaeTrainConfig {
        epochs: 20,
        ..Default::default()
    };
    let l0: Vec<f64> = [0.0, 0.1, 1.0]
        .iter()
        .map(|&lam| {
            let (m, _) = train_sae(&z, &norm, 4, lam, &cfg).unwrap();
            m.mean_l0(&z).unwrap()
        })
        .collect();
    assert!(l0[0] > l0[1] && l0[1] > l0[2], "{l0:?}");
}

#[test]
fn planted_decisive_feature_on_a_trained_sae() {
    let cfg = SynthConfig {
        n_questions: 1500,
        d_model: 64,
        signal_dims: 16,
        ..Default::default()
    };
    let task = gen_task(&cfg).unwrap();
    let spec = SplitSpec::new(0.7, 0.15, 0.15, 0).unwrap();
    let (train, _, test) = split_grouped(task.dataset(), &spec).unwrap();
    let norm = fit_normalizer(&train).unwrap();
    let z = norm.apply_rows(train.activations()).unwrap();
    let scfg = SaeTrainConfig {
        epochs: 10,
        ..Default::default()
    };
    let (mut m, _) = train_sae(&z, &norm, 4, 1.0, &scfg).unwrap();
    let planted = task.plant_sae_features(&mut m, 50, 1).unwrap();

    let mut feats = vec![planted.decisive];
    feats.extend(&planted.dormant);
    let out = ablation_sweep(&m, &test, &task, &feats, 25).unwrap();
    assert!(out[0].delta_acc < 0.0, "{:?}", out[0]);
    for a in &out[1..] {
        assert!(a.delta_acc.abs() < 0.005 && a.delta_ece.abs() < 0.005, "{a:?}");
    }

    // the planted feature is the one most correlated with the residual labels
    let y = dataset_labels(&train, false).unwrap().residuals;
    let stats = feature_stats(&m, &z, &y).unwrap();
    assert_eq!(select_by_correlation(&stats, 1), vec![planted.decisive]);
    for &j in &planted.dormant {
        assert_eq!(stats.count[j], 0);
        assert!(!stats.passes_filter(j));
    }
}

#[test]
fn trained_sae_round_trips_bit_exactly() {
    let (norm, z) = planted(1000);
    let cfg = SaeTrainConfig {
        epochs: 3,
        ..Default::default()
    };
    let (m, _) = train_sae(&z, &norm, 2, 0.1, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_sae(&m, dir.path()).unwrap();
    let back = load_sae(dir.path()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.encode_rows(&z).unwrap(), m.encode_rows(&z).unwrap());
}
