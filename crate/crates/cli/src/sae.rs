use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use rcsteer::dataset::{fit_normalizer, ActivationDataset};
use rcsteer::labels::dataset_labels;
use rcsteer::probes::fit_ridge;
use rcsteer::sae::{
    ablation_sweep, feature_stats, impact_scores, impacts_csv, load_sae, sae_steer_eval, save_sae,
    select_by_correlation, select_union, steering_weights, train_sae,
    AblationImpact, FeatureStats, SaeModel, SaeTrainConfig,
};
use rcsteer::synth::{SynthTask, TASK_FILE};
use serde_json::json;

use crate::io;
use crate::{Common, DatasetArg, Part, SplitArgs};

#[derive(Subcommand, Debug)]
pub enum SaeCmd {
    /// Train an SAE on the normalized activations of one split part.
    Train(TrainArgs),
    /// Ablate features one at a time and record accuracy/ECE deltas.
    Ablate(AblateArgs),
    /// Steer with ablation-derived feature weights and report metrics.
    Steer(SteerArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value_t = Part::Train)]
    pub part: Part,
    /// Dictionary size as a multiple of the activation width.
    #[arg(long, default_value_t = 4)]
    pub expansion: usize,
    /// Sparsity penalty weight.
    #[arg(long, default_value_t = 1.0)]
    pub sae_lambda: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Synthetic tasks only: append the planted decisive feature and this
    /// many never-firing features after training.
    #[arg(long)]
    pub plant_dormant: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Top features by |correlation| with the residual labels, after the activity filter.
    Corr,
    /// Top features by |decoder · ridge weights · mean activation|.
    Impact,
    /// Union of the corr and impact selections.
    Union,
    /// Every feature.
    All,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Synthetic task directory (needs task.json for re-scoring).
    #[command(flatten)]
    pub dataset: DatasetArg,
    #[arg(long)]
    pub sae: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value_t = Part::Test)]
    pub part: Part,
    #[arg(long, value_enum, default_value_t = Selection::Union)]
    pub select: Selection,
    /// Features per selection criterion.
    #[arg(long, default_value_t = 150)]
    pub top: usize,
    /// Explicit feature list; overrides --select.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub ridge_alpha: f64,
}

#[derive(Args, Debug)]
pub struct SteerArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    #[arg(long)]
    pub sae: PathBuf,
    /// impacts.csv from `sae ablate`.
    #[arg(long)]
    pub impacts: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_acc: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha_cal: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, value_enum, default_value_t = Part::Test)]
    pub part: Part,
}

pub fn run(c: &Common, cmd: SaeCmd) -> Result<()> {
    match cmd {
        SaeCmd::Train(a) => train(c, a),
        SaeCmd::Ablate(a) => ablate(c, a),
        SaeCmd::Steer(a) => steer(c, a),
    }
}

fn load_task(dir: &Path) -> Result<SynthTask> {
    if !dir.join(TASK_FILE).is_file() {
        anyhow::bail!(
            "{} has no {TASK_FILE}; re-scoring ablated activations needs a synthetic readout",
            dir.display()
        );
    }
    Ok(SynthTask::load(dir)?)
}

fn part_of(c: &Common, ds: &ActivationDataset, split: &SplitArgs, part: Part) -> Result<ActivationDataset> {
    io::select_part(ds, part, &io::split_spec(&split.split, c.seed)?)
}

fn stats_csv(s: &FeatureStats) -> String {
    let mut out = String::from("feature,count,frequency,mean_activation,correlation,passes_filter\n");
    for j in 0..s.len() {
        out.push_str(&format!(
            "{j},{},{},{},{},{}\n",
            s.count[j],
            s.frequency[j],
            s.mean_activation[j],
            s.correlation[j],
            u8::from(s.passes_filter(j))
        ));
    }
    out
}

fn stats_for(m: &SaeModel<f32>, ds: &ActivationDataset, c: &Common) -> Result<FeatureStats> {
    let z = m.normalizer.apply_rows(ds.activations())?;
    let y = dataset_labels(ds, c.length_normalize)?.residuals;
    Ok(feature_stats(m, &z, &y)?)
}

fn train(c: &Common, a: TrainArgs) -> Result<()> {
    let ds = io::load(&a.dataset.dataset)?;
    let part = part_of(c, &ds, &a.split, a.part)?;
    let norm = fit_normalizer(&part)?;
    let z = norm.apply_rows(part.activations())?;
    let cfg = SaeTrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: c.seed,
        ..SaeTrainConfig::default()
    };
    let (mut m, hist) = train_sae(&z, &norm, a.expansion, a.sae_lambda, &cfg)?;
    io::out_dir(&a.out)?;
    if let Some(n) = a.plant_dormant {
        let task = load_task(&a.dataset.dataset)?;
        let planted = task.plant_sae_features(&mut m, n, c.seed)?;
        io::write_json(
            a.out.join("planted.json"),
            &json!({ "decisive": planted.decisive, "dormant": planted.dormant }),
        )?;
    }
    save_sae(&m, &a.out)?;
    io::write(a.out.join("history.csv"), hist.csv())?;
    io::write(a.out.join("stats.csv"), stats_csv(&stats_for(&m, &part, c)?))?;
    io::write_json(
        a.out.join("train.json"),
        &json!({
            "reconstruction_mse": m.reconstruction_mse(&z)?,
            "mean_l0": m.mean_l0(&z)?,
            "n_features": m.n_features,
            "config": cfg,
        }),
    )
}

fn ablate(c: &Common, a: AblateArgs) -> Result<()> {
    let task = load_task(&a.dataset.dataset)?;
    let m = load_sae(&a.sae).with_context(|| format!("loading sae {}", a.sae.display()))?;
    let ds = part_of(c, task.dataset(), &a.split, a.part)?;
    let stats = stats_for(&m, &ds, c)?;
    let impact = if a.features.is_empty() && matches!(a.select, Selection::Impact | Selection::Union) {
        let y = dataset_labels(&ds, c.length_normalize)?.residuals;
        let ridge = fit_ridge(ds.activations(), &y, ds.d_model(), a.ridge_alpha)?;
        Some(impact_scores(&m, &stats, &ridge, &m.normalizer.std)?)
    } else {
        None
    };
    let top_impact = |s: &[f64]| {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&x, &y| s[y].abs().total_cmp(&s[x].abs()).then(x.cmp(&y)));
        idx.truncate(a.top);
        idx
    };
    let features = match (&impact, a.select) {
        _ if !a.features.is_empty() => a.features.clone(),
        (_, Selection::All) => (0..m.n_features).collect(),
        (_, Selection::Corr) => select_by_correlation(&stats, a.top),
        (Some(s), Selection::Impact) => top_impact(s),
        (Some(s), Selection::Union) => {
            select_union(&[select_by_correlation(&stats, a.top), top_impact(s)])
        }
        (None, _) => unreachable!("impact scores computed for impact selections"),
    };
    let impacts = ablation_sweep(&m, &ds, &task, &features, c.bins)?;
    io::out_dir(&a.out)?;
    io::write(a.out.join("impacts.csv"), impacts_csv(&impacts))?;
    io::write(a.out.join("summary.csv"), summary_csv(&impacts))?;
    io::write(a.out.join("stats.csv"), stats_csv(&stats))?;
    if let Some(s) = &impact {
        let mut csv = String::from("feature,impact_score\n");
        for &j in &features {
            csv.push_str(&format!("{j},{}\n", s[j]));
        }
        io::write(a.out.join("impact_scores.csv"), csv)?;
    }
    Ok(())
}

/// Distribution of ablation deltas: min, quartiles, max, mean.
fn summary_csv(impacts: &[AblationImpact]) -> String {
    let acc: Vec<f64> = impacts.iter().map(|i| i.delta_acc).collect();
    let ece: Vec<f64> = impacts.iter().map(|i| i.delta_ece).collect();
    let (sa, se) = (io::summary(&acc), io::summary(&ece));
    let mut s = String::from("stat,delta_acc,delta_ece\n");
    for (k, name) in ["min", "q1", "median", "q3", "max", "mean"].iter().enumerate() {
        s.push_str(&format!("{name},{},{}\n", sa[k], se[k]));
    }
    s.push_str(&format!("count,{},{}\n", acc.len(), ece.len()));
    s
}

fn read_impacts(path: &Path) -> Result<Vec<AblationImpact>> {
    if !path.is_file() {
        return Err(rcsteer::Error::MissingFile(path.to_path_buf()).into());
    }
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            anyhow::bail!("{}:{}: expected 3 fields", path.display(), i + 1);
        }
        out.push(AblationImpact {
            feature: f[0].parse()?,
            delta_acc: f[1].parse()?,
            delta_ece: f[2].parse()?,
        });
    }
    Ok(out)
}

fn steer(c: &Common, a: SteerArgs) -> Result<()> {
    let task = load_task(&a.dataset.dataset)?;
    let m = load_sae(&a.sae).with_context(|| format!("loading sae {}", a.sae.display()))?;
    let ds = part_of(c, task.dataset(), &a.split, a.part)?;
    let sw = steering_weights(&read_impacts(&a.impacts)?, a.alpha_acc, a.alpha_cal)?;
    let (base, steered) = sae_steer_eval(&m, &ds, &task, &sw, a.gamma, c.bins)?;
    io::out_dir(&a.out)?;
    io::write_json(a.out.join("weights.json"), &sw)?;
    io::write_json(
        a.out.join("report.json"),
        &json!({
            "gamma": a.gamma,
            "alpha_acc": a.alpha_acc,
            "alpha_cal": a.alpha_cal,
            "bins": c.bins,
            "base": io::scaled(&base, c.report_scale),
            "steered": io::scaled(&steered, c.report_scale),
        }),
    )
}
