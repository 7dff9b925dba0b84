use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rcsteer::dataset::{concat_layers, fit_normalizer, save_dataset, split_grouped, NORM_FILE};
use rcsteer::diagnostics::parse_head_tag;
use rcsteer::metrics::report;
use rcsteer::pipeline::probe_inputs;
use rcsteer::probes::{grid_search, load_probe, save_probe, ProbeData, ProbeGrid, TrainConfig};
use rcsteer::steering::{
    default_gamma_grid, probe_outputs, select_layer, steered_eval, sweep_gamma_outputs,
};
use rcsteer::synth::{gen_heads, gen_layer_stack, gen_task, SynthConfig};
use serde_json::json;

use crate::io::{self, SplitRecord, SPLIT_FILE};
use crate::{Common, DatasetArg, Part, SplitArgs};

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4000)]
    pub n_questions: usize,
    #[arg(long, default_value_t = 4)]
    pub n_options: usize,
    #[arg(long, default_value_t = 256)]
    pub d_model: usize,
    #[arg(long, default_value_t = 64)]
    pub signal_dims: usize,
    #[arg(long, default_value_t = 6.0)]
    pub signal_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    pub temperature: f64,
    #[arg(long, default_value_t = 5.0)]
    pub spurious_weight: f64,
    #[arg(long, default_value_t = 0.1)]
    pub score_noise: f64,
    /// Emit this many layers (as layer_<l>/ subdirectories); only one carries signal.
    #[arg(long, default_value_t = 1)]
    pub n_layers: usize,
    #[arg(long, default_value_t = 0)]
    pub signal_layer: usize,
    /// Also emit a (layer, head) grid under heads/, with this many heads per layer.
    #[arg(long, default_value_t = 0)]
    pub heads: usize,
    #[arg(long, default_value_t = 1)]
    pub head_layers: usize,
    #[arg(long, default_value_t = 16)]
    pub d_head: usize,
    /// Heads carrying the residual label, as `layer:head` pairs.
    #[arg(long, value_delimiter = ',')]
    pub planted: Vec<String>,
}

fn parse_pair(s: &str) -> Result<(usize, usize)> {
    let (l, h) = s
        .split_once(':')
        .with_context(|| format!("expected layer:head, got {s:?}"))?;
    Ok((l.trim().parse()?, h.trim().parse()?))
}

pub fn synth(c: &Common, a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_questions: a.n_questions,
        n_options: a.n_options,
        d_model: a.d_model,
        signal_dims: a.signal_dims,
        signal_scale: a.signal_scale,
        noise_scale: a.noise_scale,
        readout_temperature: a.temperature,
        spurious_weight: a.spurious_weight,
        score_noise: a.score_noise,
        seed: c.seed,
    };
    io::out_dir(&a.out)?;
    let task = if a.n_layers > 1 {
        let (mut task, layers) = gen_layer_stack(&cfg, a.n_layers, a.signal_layer)?;
        for (l, ds) in layers.into_iter().enumerate() {
            let dir = a.out.join(format!("layer_{l}"));
            if l == a.signal_layer {
                // keep the layer id and tag of the stack
                task.dataset = Some(ds);
                task.save(&dir)?;
            } else {
                save_dataset(&ds, &dir)?;
            }
        }
        task
    } else {
        let task = gen_task(&cfg)?;
        task.save(&a.out)?;
        task
    };
    if a.heads > 0 {
        let planted = a
            .planted
            .iter()
            .map(|s| parse_pair(s))
            .collect::<Result<Vec<_>>>()?;
        let sets = gen_heads(task.dataset(), a.head_layers, a.heads, a.d_head, &planted, c.seed)?;
        for ds in &sets {
            let (l, h) = parse_head_tag(ds.source_tag()).expect("generated head tag");
            save_dataset(ds, a.out.join("heads").join(format!("layer{l}_head{h}")))?;
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainProbeArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 512, 256, 128])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, value_delimiter = ',', default_values_t = ProbeGrid::default().learning_rates)]
    pub grid_lr: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = ProbeGrid::default().weight_decays)]
    pub grid_wd: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = ProbeGrid::default().lambda_outs)]
    pub grid_lambda_out: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

pub fn train_probe(c: &Common, a: TrainProbeArgs) -> Result<()> {
    let ds = io::load(&a.dataset.dataset)?;
    let spec = io::split_spec(&a.split.split, c.seed)?;
    let (train, val, _) = split_grouped(&ds, &spec)?;
    let norm = fit_normalizer(&train)?;
    let (xt, yt) = probe_inputs(&train, &norm, c.length_normalize)?;
    let (xv, yv) = probe_inputs(&val, &norm, c.length_normalize)?;
    let d = ds.d_model();
    let grid = ProbeGrid {
        learning_rates: a.grid_lr,
        weight_decays: a.grid_wd,
        lambda_outs: a.grid_lambda_out,
    };
    let base = TrainConfig {
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        early_stop_patience: a.patience,
        seed: c.seed,
        ..TrainConfig::default()
    };
    let res = grid_search(
        &a.hidden,
        a.dropout,
        c.seed,
        &grid,
        &base,
        &ProbeData::new(&xt, &yt, d)?,
        &ProbeData::new(&xv, &yv, d)?,
    )?;
    io::out_dir(&a.out)?;
    save_probe(&res.probe, &norm, &a.out)?;
    norm.save(a.out.join(NORM_FILE))?;
    io::write(a.out.join("grid.csv"), res.csv())?;
    io::write(a.out.join("history.csv"), res.history.csv())?;
    io::write_json(a.out.join(SPLIT_FILE), &SplitRecord::new(&ds, spec)?)?;
    io::write_json(
        a.out.join("train.json"),
        &json!({
            "dataset": ds.fingerprint(),
            "config": res.config,
            "val_r2": res.history.best_r2(),
            "best_epoch": res.history.best_epoch,
            "length_normalize": c.length_normalize,
        }),
    )
}

#[derive(Args, Debug)]
pub struct SteerArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Probe directory written by train-probe.
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Questions to steer, using the probe's stored split.
    #[arg(long, value_enum, default_value_t = Part::All)]
    pub part: Part,
}

pub fn steer(c: &Common, a: SteerArgs) -> Result<()> {
    let ds = io::load(&a.dataset.dataset)?;
    let (probe, norm) = load_probe(&a.probe).with_context(|| format!("loading probe {}", a.probe.display()))?;
    let ds = io::probe_part(&ds, a.part, &a.probe)?;
    let outs = probe_outputs(&ds, &probe, &norm, c.length_normalize)?;
    let preds = outs.steer(a.gamma, c.fallback.into())?;
    let base = report(&outs.base_eval()?, c.bins)?;
    let steered = report(&steered_eval(&preds)?, c.bins)?;
    io::out_dir(&a.out)?;
    let lines: String = preds.iter().map(|p| p.jsonl() + "\n").collect();
    io::write(a.out.join("steered.jsonl"), lines)?;
    io::write(a.out.join("reliability_base.csv"), base.reliability_csv())?;
    io::write(a.out.join("reliability_steered.csv"), steered.reliability_csv())?;
    io::write_json(
        a.out.join("report.json"),
        &json!({
            "gamma": a.gamma,
            "fallback": rcsteer::steering::Fallback::from(c.fallback),
            "bins": c.bins,
            "base": io::scaled(&base, c.report_scale),
            "steered": io::scaled(&steered, c.report_scale),
        }),
    )
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Dataset directory per layer.
    #[arg(long, value_delimiter = ',', required = true)]
    pub layers: Vec<PathBuf>,
    /// Probe directory per layer (or one shared probe).
    #[arg(long, value_delimiter = ',', required = true)]
    pub probes: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = default_gamma_grid())]
    pub gammas: Vec<f64>,
    /// Selection set, taken from each probe's stored split.
    #[arg(long, value_enum, default_value_t = Part::Val)]
    pub part: Part,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn pair_probes(layers: &[PathBuf], probes: &[PathBuf]) -> Result<Vec<PathBuf>> {
    io::dirs_or_die(layers, "layer datasets")?;
    match probes.len() {
        1 => Ok(vec![probes[0].clone(); layers.len()]),
        n if n == layers.len() => Ok(probes.to_vec()),
        n => anyhow::bail!("{n} probes for {} layers", layers.len()),
    }
}

pub fn sweep(c: &Common, a: SweepArgs) -> Result<()> {
    let probes = pair_probes(&a.layers, &a.probes)?;
    let mut gamma_csv = String::from("layer,gamma,accuracy,ece,cwece,brier,nll\n");
    let mut layer_csv = String::from(
        "layer,best_gamma,accuracy,ece,cwece,brier,nll,base_accuracy,base_ece,base_cwece,base_brier,base_nll\n",
    );
    let mut picks = Vec::new();
    let mut best_gammas = Vec::new();
    for (dir, pdir) in a.layers.iter().zip(&probes) {
        let ds = io::load(dir)?;
        let (probe, norm) = load_probe(pdir).with_context(|| format!("loading probe {}", pdir.display()))?;
        let part = io::probe_part(&ds, a.part, pdir)?;
        let outs = probe_outputs(&part, &probe, &norm, c.length_normalize)?;
        let sw = sweep_gamma_outputs(&outs, &a.gammas, c.fallback.into(), c.bins)?;
        let base = report(&outs.base_eval()?, c.bins)?;
        let layer = ds.layer_id();
        for r in &sw.rows {
            gamma_csv.push_str(&format!("{layer},{},{}\n", r.gamma, io::csv_list(&r.report.headline())));
        }
        let best = sw.best();
        layer_csv.push_str(&format!(
            "{layer},{},{},{}\n",
            best.gamma,
            io::csv_list(&best.report.headline()),
            io::csv_list(&base.headline())
        ));
        picks.push((layer, best.report.clone()));
        best_gammas.push((layer, best.gamma));
    }
    let layer = select_layer(&picks)?;
    let gamma = best_gammas.iter().find(|(l, _)| *l == layer).map(|p| p.1).unwrap();
    io::out_dir(&a.out)?;
    io::write(a.out.join("gammas.csv"), gamma_csv)?;
    io::write(a.out.join("layers.csv"), layer_csv)?;
    io::write_json(a.out.join("selection.json"), &json!({ "layer": layer, "gamma": gamma }))
}

#[derive(Args, Debug)]
pub struct ConcatArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub layers: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn concat(a: ConcatArgs) -> Result<()> {
    let dss = a.layers.iter().map(|d| io::load(d)).collect::<Result<Vec<_>>>()?;
    save_dataset(&concat_layers(&dss)?, &a.out)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn eval(c: &Common, a: EvalArgs) -> Result<()> {
    let ds = io::load(&a.dataset.dataset)?;
    let probs = rcsteer::labels::dataset_labels(&ds, c.length_normalize)?;
    let ev = rcsteer::metrics::EvalSet::new(
        probs.probs.iter().map(|p| p.0.clone()).collect(),
        ds.records().iter().map(|r| r.correct).collect(),
    )?;
    let r = report(&ev, c.bins)?;
    io::out_dir(&a.out)?;
    io::write(a.out.join("reliability.csv"), r.reliability_csv())?;
    io::write_json(a.out.join("report.json"), &json!({ "bins": c.bins, "base": io::scaled(&r, c.report_scale) }))
}
