use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use rcsteer::diagnostics::{
    cumulative_signal, dimensionality_curve, heads_csv, layer_sweep_report, probe_heads,
    HeadActivationSet, HeadProbeConfig, LayerInput, DEFAULT_RIDGE_ALPHA, HEAD_HIDDEN,
};
use rcsteer::labels::dataset_labels;
use rcsteer::probes::{load_probe, TrainConfig};
use serde_json::json;

use crate::io;
use crate::{Common, DatasetArg, Part};

#[derive(Subcommand, Debug)]
pub enum DiagnoseCmd {
    /// Cross-validated residual probe per attention head.
    Heads(HeadsArgs),
    /// Ridge R² on the top-k principal components, for several k.
    Pca(PcaArgs),
    /// Steered vs. unsteered accuracy and ECE per layer at a fixed γ.
    Layers(LayersArgs),
}

#[derive(Args, Debug)]
pub struct HeadsArgs {
    /// Directory holding one ACTV1 dataset per head (source tag `layer=L,head=H`).
    #[arg(long)]
    pub heads_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_delimiter = ',', default_values_t = HEAD_HIDDEN)]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Fraction of total R² the cumulative-signal count must reach.
    #[arg(long, default_value_t = 0.8)]
    pub target: f64,
}

#[derive(Args, Debug)]
pub struct PcaArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Component counts; values above the activation width are dropped.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 5, 10, 20, 50, 100, 200])]
    pub ks: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = DEFAULT_RIDGE_ALPHA)]
    pub ridge_alpha: f64,
}

#[derive(Args, Debug)]
pub struct LayersArgs {
    /// Dataset directory per layer.
    #[arg(long, value_delimiter = ',', required = true)]
    pub layers: Vec<PathBuf>,
    /// Probe directory per layer (or one shared probe).
    #[arg(long, value_delimiter = ',', required = true)]
    pub probes: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value_t = Part::Test)]
    pub part: Part,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(c: &Common, cmd: DiagnoseCmd) -> Result<()> {
    match cmd {
        DiagnoseCmd::Heads(a) => heads(c, a),
        DiagnoseCmd::Pca(a) => pca(c, a),
        DiagnoseCmd::Layers(a) => layers(c, a),
    }
}

fn heads(c: &Common, a: HeadsArgs) -> Result<()> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(&a.heads_dir)
        .with_context(|| format!("reading {}", a.heads_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    io::dirs_or_die(&dirs, "head datasets")?;
    let sets = dirs.iter().map(|d| io::load(d)).collect::<Result<Vec<_>>>()?;
    let labels = dataset_labels(&sets[0], c.length_normalize)?.residuals;
    let hs = HeadActivationSet::from_datasets(sets)?;
    let cfg = HeadProbeConfig {
        folds: a.folds,
        hidden: a.hidden,
        train: TrainConfig {
            learning_rate: a.lr,
            max_epochs: a.epochs,
            seed: c.seed,
            ..TrainConfig::default()
        },
        seed: c.seed,
        ..HeadProbeConfig::default()
    };
    let scores = probe_heads(&hs, &labels, &cfg)?;
    io::out_dir(&a.out)?;
    io::write(a.out.join("heads.csv"), heads_csv(&scores))?;
    let needed = cumulative_signal(&scores, a.target).ok();
    io::write_json(
        a.out.join("cumulative.json"),
        &json!({ "target": a.target, "heads_needed": needed, "n_heads": scores.len() }),
    )
}

fn pca(c: &Common, a: PcaArgs) -> Result<()> {
    let ds = io::load(&a.dataset.dataset)?;
    let y = dataset_labels(&ds, c.length_normalize)?.residuals;
    let n = ds.n_options();
    let groups: Vec<usize> = (0..ds.n_rows()).map(|r| r / n).collect();
    let rows = ds.n_rows() - ds.n_rows() / a.folds.max(1);
    let ks: Vec<usize> = a
        .ks
        .iter()
        .copied()
        .filter(|&k| k >= 1 && k <= ds.d_model() && k < rows)
        .collect();
    let curve = dimensionality_curve(
        ds.activations(),
        &y,
        ds.d_model(),
        &groups,
        &ks,
        a.ridge_alpha,
        a.folds,
        c.seed,
    )?;
    io::out_dir(&a.out)?;
    io::write(a.out.join("dimcurve.csv"), curve.csv())
}

fn layers(c: &Common, a: LayersArgs) -> Result<()> {
    let probes = crate::probe::pair_probes(&a.layers, &a.probes)?;
    let mut data = Vec::new();
    for (dir, pdir) in a.layers.iter().zip(&probes) {
        let ds = io::load(dir)?;
        let (probe, norm) = load_probe(pdir).with_context(|| format!("loading probe {}", pdir.display()))?;
        data.push((io::probe_part(&ds, a.part, pdir)?, probe, norm));
    }
    let inputs: Vec<LayerInput> = data
        .iter()
        .map(|(ds, p, n)| LayerInput {
            dataset: ds,
            probe: p,
            normalizer: n,
        })
        .collect();
    let rep = layer_sweep_report(&inputs, a.gamma, c.fallback.into(), c.bins, c.length_normalize)?;
    io::out_dir(&a.out)?;
    io::write(a.out.join("layers.csv"), rep.csv())?;
    io::write_json(
        a.out.join("best_layer.json"),
        &json!({ "gamma": a.gamma, "best_gain_layer": rep.best_gain_layer() }),
    )
}
