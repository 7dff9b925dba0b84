use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rcsteer::dataset::{load_dataset, ActivationDataset, SplitSpec};
use rcsteer::metrics::CalibrationReport;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{Part, ReportScale};

pub const SPLIT_FILE: &str = "split.json";

pub fn out_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

pub fn write(path: impl AsRef<Path>, s: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write(path, s)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(rcsteer::Error::MissingFile(path.to_path_buf()).into());
    }
    let s = fs::read_to_string(path)?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

pub fn load(dir: &Path) -> Result<ActivationDataset> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

pub fn split_spec(fr: &[f64], seed: u64) -> Result<SplitSpec> {
    if fr.len() != 3 {
        anyhow::bail!("--split needs three fractions (train,val,test), got {}", fr.len());
    }
    Ok(SplitSpec::new(fr[0], fr[1], fr[2], seed)?)
}

/// Split used when a probe was trained, stored next to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitRecord {
    pub spec: SplitSpec,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitRecord {
    pub fn new(ds: &ActivationDataset, spec: SplitSpec) -> Result<Self> {
        let [tr, va, te] = spec.assign(ds.n_questions())?;
        let qids = |ix: &[usize]| ix.iter().map(|&q| ds.records()[q].qid.clone()).collect();
        Ok(Self {
            spec,
            train: qids(&tr),
            val: qids(&va),
            test: qids(&te),
        })
    }
}

/// Questions of `part` under `spec`.
pub fn select_part(ds: &ActivationDataset, part: Part, spec: &SplitSpec) -> Result<ActivationDataset> {
    let [tr, va, te] = spec.assign(ds.n_questions())?;
    Ok(match part {
        Part::All => ds.clone(),
        Part::Train => ds.subset(&tr),
        Part::Val => ds.subset(&va),
        Part::Test => ds.subset(&te),
    })
}

/// Split spec stored in a probe directory; `All` needs none.
pub fn probe_part(ds: &ActivationDataset, part: Part, probe_dir: &Path) -> Result<ActivationDataset> {
    if part == Part::All {
        return Ok(ds.clone());
    }
    let rec: SplitRecord = read_json(&probe_dir.join(SPLIT_FILE))?;
    select_part(ds, part, &rec.spec)
}

fn headline(r: &CalibrationReport, k: f64) -> Value {
    json!({
        "n": r.n,
        "accuracy": r.accuracy * k,
        "ece": r.ece * k,
        "cwece": r.cwece * k,
        "brier": r.brier * k,
        "nll": r.nll * k,
        "nll_floored": r.nll_floored,
    })
}

/// Report object at the requested scale(s).
pub fn scaled(r: &CalibrationReport, scale: ReportScale) -> Value {
    match scale {
        ReportScale::Raw => json!({ "raw": headline(r, 1.0) }),
        ReportScale::X100 => json!({ "x100": headline(r, 100.0) }),
        ReportScale::Both => json!({ "raw": headline(r, 1.0), "x100": headline(r, 100.0) }),
    }
}

pub fn dirs_or_die(dirs: &[PathBuf], what: &str) -> Result<()> {
    if dirs.is_empty() {
        anyhow::bail!("no {what} given");
    }
    Ok(())
}

pub fn csv_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Min, quartiles (linear interpolation), max and mean.
pub fn summary(v: &[f64]) -> [f64; 6] {
    if v.is_empty() {
        return [f64::NAN; 6];
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    [s[0], q(0.25), q(0.5), q(0.75), s[s.len() - 1], mean]
}
