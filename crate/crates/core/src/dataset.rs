//! Per-option activation datasets and the `ACTV1` directory format.
//!
//! A dataset directory holds three files:
//!
//! * `manifest.json`: format tag, shapes, layer id, and provenance tag.
//! * `activations.f32`: little-endian `f32`, row-major `[n_questions * n_options, d_model]`.
//!   Row `q * n_options + j` is option `j` of question `q`.
//! * `records.jsonl`: one object per question, in row order.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "ACTV1";
pub const DTYPE_TAG: &str = "f32le";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "activations.f32";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const NORM_FILE: &str = "norm.json";

/// Floor applied to per-dimension standard deviations.
pub const STD_FLOOR: f32 = 1e-6;

/// Layer id given to datasets built by [`concat_layers`].
pub const CONCAT_LAYER_ID: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub d_model: usize,
    pub n_options: usize,
    pub n_questions: usize,
    pub layer_id: i64,
    pub source_tag: String,
    pub dtype: String,
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qid: String,
    pub correct: usize,
    pub log_scores: Vec<f64>,
    pub token_counts: Vec<u32>,
}

impl QuestionRecord {
    fn check(&self, n_options: usize) -> std::result::Result<(), String> {
        if self.correct >= n_options {
            return Err(format!(
                "correct index {} out of range for {} options",
                self.correct, n_options
            ));
        }
        if self.log_scores.len() != n_options {
            return Err(format!(
                "{} log scores, expected {}",
                self.log_scores.len(),
                n_options
            ));
        }
        if self.token_counts.len() != n_options {
            return Err(format!(
                "{} token counts, expected {}",
                self.token_counts.len(),
                n_options
            ));
        }
        if self.log_scores.iter().any(|s| !s.is_finite()) {
            return Err("non-finite log score".into());
        }
        if self.token_counts.iter().any(|&c| c == 0) {
            return Err("token count must be >= 1".into());
        }
        Ok(())
    }
}

/// Grouped per-question, per-option activations with base scores and answers.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    d_model: usize,
    n_options: usize,
    layer_id: i64,
    source_tag: String,
    records: Vec<QuestionRecord>,
    activations: Vec<f32>,
}

impl ActivationDataset {
    pub fn new(
        d_model: usize,
        n_options: usize,
        layer_id: i64,
        source_tag: impl Into<String>,
        records: Vec<QuestionRecord>,
        activations: Vec<f32>,
    ) -> Result<Self> {
        if d_model == 0 || n_options == 0 {
            return Err(Error::ShapeMismatch(format!(
                "d_model ({d_model}) and n_options ({n_options}) must be positive"
            )));
        }
        let want = records.len() * n_options * d_model;
        if activations.len() != want {
            return Err(Error::ShapeMismatch(format!(
                "{} activation values, expected {want}",
                activations.len()
            )));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.check(n_options)
                .map_err(|reason| Error::CorruptRecord { line: i + 1, reason })?;
            if !seen.insert(r.qid.as_str()) {
                return Err(Error::DuplicateQid(r.qid.clone()));
            }
        }
        Ok(Self {
            d_model,
            n_options,
            layer_id,
            source_tag: source_tag.into(),
            records,
            activations,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn n_options(&self) -> usize {
        self.n_options
    }

    pub fn n_questions(&self) -> usize {
        self.records.len()
    }

    pub fn n_rows(&self) -> usize {
        self.records.len() * self.n_options
    }

    pub fn layer_id(&self) -> i64 {
        self.layer_id
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn records(&self) -> &[QuestionRecord] {
        &self.records
    }

    /// The backing `[n_rows, d_model]` matrix.
    pub fn activations(&self) -> &[f32] {
        &self.activations
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.activations[row * self.d_model..(row + 1) * self.d_model]
    }

    pub fn option_row(&self, question: usize, option: usize) -> &[f32] {
        self.row(question * self.n_options + option)
    }

    /// All option rows of one question, `[n_options, d_model]`.
    pub fn question_rows(&self, question: usize) -> &[f32] {
        let w = self.n_options * self.d_model;
        &self.activations[question * w..(question + 1) * w]
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: FORMAT_TAG.into(),
            d_model: self.d_model,
            n_options: self.n_options,
            n_questions: self.n_questions(),
            layer_id: self.layer_id,
            source_tag: self.source_tag.clone(),
            dtype: DTYPE_TAG.into(),
        }
    }

    /// Questions at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> ActivationDataset {
        let w = self.n_options * self.d_model;
        let mut activations = Vec::with_capacity(indices.len() * w);
        let mut records = Vec::with_capacity(indices.len());
        for &q in indices {
            activations.extend_from_slice(self.question_rows(q));
            records.push(self.records[q].clone());
        }
        ActivationDataset {
            d_model: self.d_model,
            n_options: self.n_options,
            layer_id: self.layer_id,
            source_tag: self.source_tag.clone(),
            records,
            activations,
        }
    }

    /// Same records and metadata with a replacement activation matrix.
    pub fn with_activations(&self, d_model: usize, activations: Vec<f32>) -> Result<Self> {
        ActivationDataset::new(
            d_model,
            self.n_options,
            self.layer_id,
            self.source_tag.clone(),
            self.records.clone(),
            activations,
        )
    }

    /// Stable content hash used to tag normalizers with their fitting set.
    pub fn fingerprint(&self) -> String {
        let mut h = crc32fast::Hasher::new();
        h.update(&(self.d_model as u64).to_le_bytes());
        h.update(&(self.n_options as u64).to_le_bytes());
        h.update(&self.layer_id.to_le_bytes());
        for r in &self.records {
            h.update(r.qid.as_bytes());
            h.update(&[0]);
        }
        h.update(&f32_to_le_bytes(&self.activations));
        format!("actv1:{:08x}:{}x{}", h.finalize(), self.n_rows(), self.d_model)
    }
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f32_from_le_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn read_existing(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<ActivationDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let blob_path = dir.join(BLOB_FILE);
    let records_path = dir.join(RECORDS_FILE);
    for p in [&manifest_path, &blob_path, &records_path] {
        if !p.is_file() {
            return Err(Error::MissingFile(p.clone()));
        }
    }

    let manifest: Manifest = serde_json::from_slice(&read_existing(&manifest_path)?)
        .map_err(|e| Error::json(&manifest_path, e))?;
    if manifest.format != FORMAT_TAG {
        return Err(Error::UnsupportedVersion(manifest.format));
    }
    if manifest.dtype != DTYPE_TAG {
        return Err(Error::UnsupportedVersion(manifest.dtype));
    }

    let blob = read_existing(&blob_path)?;
    let want = 4 * manifest.n_questions * manifest.n_options * manifest.d_model;
    if blob.len() != want {
        return Err(Error::ShapeMismatch(format!(
            "{} has {} bytes, manifest implies {want}",
            BLOB_FILE,
            blob.len()
        )));
    }

    let file = fs::File::open(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let mut records = Vec::with_capacity(manifest.n_questions);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&records_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QuestionRecord = serde_json::from_str(&line).map_err(|e| Error::CorruptRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        rec.check(manifest.n_options)
            .map_err(|reason| Error::CorruptRecord { line: i + 1, reason })?;
        records.push(rec);
    }
    if records.len() != manifest.n_questions {
        return Err(Error::ShapeMismatch(format!(
            "{} records, manifest says {}",
            records.len(),
            manifest.n_questions
        )));
    }

    ActivationDataset::new(
        manifest.d_model,
        manifest.n_options,
        manifest.layer_id,
        manifest.source_tag,
        records,
        f32_from_le_bytes(&blob),
    )
}

pub fn save_dataset(ds: &ActivationDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let manifest = serde_json::to_string_pretty(&ds.manifest()).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
    write_file(&dir.join(BLOB_FILE), &f32_to_le_bytes(&ds.activations))?;

    let path = dir.join(RECORDS_FILE);
    let mut out = Vec::new();
    for r in &ds.records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&out).map_err(|e| Error::io(&path, e))
}

/// Per-dimension z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub fitted_on: String,
}

impl Normalizer {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Identity normalizer (mean 0, std 1).
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            fitted_on: "identity".into(),
        }
    }

    /// Fit over every option row of a matrix `[rows, dim]`, population std.
    pub fn fit_rows(rows: &[f32], dim: usize, fitted_on: impl Into<String>) -> Result<Self> {
        let n = if dim == 0 { 0 } else { rows.len() / dim };
        if n < 2 {
            return Err(Error::TooFewRows { need: 2, got: n });
        }
        let mut mean = vec![0.0f64; dim];
        for r in rows.chunks_exact(dim) {
            for (m, &x) in mean.iter_mut().zip(r) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0f64; dim];
        for r in rows.chunks_exact(dim) {
            for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(r) {
                let d = x as f64 - m;
                *v += d * d;
            }
        }
        Ok(Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var
                .iter()
                .map(|&v| ((v / n as f64).sqrt() as f32).max(STD_FLOOR))
                .collect(),
            fitted_on: fitted_on.into(),
        })
    }

    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect())
    }

    /// Normalize a whole `[rows, dim]` matrix.
    pub fn apply_rows(&self, rows: &[f32]) -> Result<Vec<f32>> {
        let d = self.dim();
        if d == 0 || rows.len() % d != 0 {
            return Err(Error::DimMismatch {
                expected: d,
                got: rows.len(),
            });
        }
        let mut out = Vec::with_capacity(rows.len());
        for r in rows.chunks_exact(d) {
            out.extend(
                r.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(&v, (&m, &s))| (v - m) / s),
            );
        }
        Ok(out)
    }

    pub fn invert(&self, z: &[f32]) -> Result<Vec<f32>> {
        if z.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        Ok(z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("normalizer serializes");
        write_file(path.as_ref(), json.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        serde_json::from_slice(&read_existing(path)?).map_err(|e| Error::json(path, e))
    }
}

pub fn fit_normalizer(train: &ActivationDataset) -> Result<Normalizer> {
    Normalizer::fit_rows(&train.activations, train.d_model, train.fingerprint())
}

pub fn apply_normalizer(n: &Normalizer, x: &[f32]) -> Result<Vec<f32>> {
    n.apply(x)
}

/// Train/validation/test fractions plus shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let s = Self {
            train,
            val,
            test,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::BadConfig(format!("split fractions {fr:?} outside [0, 1]")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::BadConfig(format!("split fractions {fr:?} do not sum to 1")));
        }
        Ok(())
    }

    /// Question indices for (train, val, test), each sorted ascending.
    pub fn assign(&self, n_questions: usize) -> Result<[Vec<usize>; 3]> {
        self.validate()?;
        if n_questions == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..n_questions).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));

        let n = n_questions as f64;
        let n_val = ((self.val * n).round() as usize).min(n_questions);
        let n_test = ((self.test * n).round() as usize).min(n_questions - n_val);
        let n_train = n_questions - n_val - n_test;

        let mut train = order[..n_train].to_vec();
        let mut val = order[n_train..n_train + n_val].to_vec();
        let mut test = order[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Ok([train, val, test])
    }
}

pub fn split_grouped(
    ds: &ActivationDataset,
    spec: &SplitSpec,
) -> Result<(ActivationDataset, ActivationDataset, ActivationDataset)> {
    let [tr, va, te] = spec.assign(ds.n_questions())?;
    Ok((ds.subset(&tr), ds.subset(&va), ds.subset(&te)))
}

/// Question-level fold ids for grouped k-fold cross validation.
pub fn grouped_folds(n_questions: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::BadConfig(format!("need at least 2 folds, got {folds}")));
    }
    if n_questions < folds {
        return Err(Error::TooFewQuestions {
            questions: n_questions,
            folds,
        });
    }
    let mut order: Vec<usize> = (0..n_questions).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n_questions];
    for (pos, &q) in order.iter().enumerate() {
        fold_of[q] = pos % folds;
    }
    Ok(fold_of)
}

/// Concatenate per-layer datasets over the same questions along the feature axis.
pub fn concat_layers(dss: &[ActivationDataset]) -> Result<ActivationDataset> {
    let first = dss.first().ok_or(Error::EmptyInput("no datasets to concatenate"))?;
    let mut layer_ids = HashSet::new();
    for ds in dss {
        if ds.n_options != first.n_options {
            return Err(Error::OptionCountMismatch(first.n_options, ds.n_options));
        }
        if ds.n_questions() != first.n_questions() {
            return Err(Error::QidOrderMismatch(first.n_questions().min(ds.n_questions())));
        }
        for (i, (a, b)) in first.records.iter().zip(&ds.records).enumerate() {
            if a.qid != b.qid || a.correct != b.correct || a.log_scores != b.log_scores {
                return Err(Error::QidOrderMismatch(i));
            }
        }
        if !layer_ids.insert(ds.layer_id) {
            return Err(Error::BadConfig(format!("layer {} given twice", ds.layer_id)));
        }
    }

    let d_total: usize = dss.iter().map(|d| d.d_model).sum();
    let mut activations = Vec::with_capacity(first.n_rows() * d_total);
    for row in 0..first.n_rows() {
        for ds in dss {
            activations.extend_from_slice(ds.row(row));
        }
    }
    let layers: Vec<String> = dss.iter().map(|d| d.layer_id.to_string()).collect();
    Ok(ActivationDataset {
        d_model: d_total,
        n_options: first.n_options,
        layer_id: CONCAT_LAYER_ID,
        source_tag: format!("concat:layers={}", layers.join(",")),
        records: first.records.clone(),
        activations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(qid: &str, correct: usize, n: usize) -> QuestionRecord {
        QuestionRecord {
            qid: qid.into(),
            correct,
            log_scores: (0..n).map(|j| -(j as f64) - 0.5).collect(),
            token_counts: vec![1; n],
        }
    }

    pub(crate) fn toy(n_q: usize, n: usize, d: usize, layer: i64) -> ActivationDataset {
        let records = (0..n_q).map(|q| rec(&format!("q{q}"), q % n, n)).collect();
        let acts = (0..n_q * n * d)
            .map(|i| ((i * 7 + layer as usize) % 13) as f32 - 6.0)
            .collect();
        ActivationDataset::new(d, n, layer, "toy", records, acts).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy(2, 4, 8, 3);
        ds.activations[5] = f32::from_bits(0x3f80_0001);
        ds.records[1].log_scores[2] = -1.234_567_890_123_456_7;
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.n_rows(), 8);
        assert_eq!(back, ds);
        let bytes = fs::read(dir.path().join(BLOB_FILE)).unwrap();
        assert_eq!(bytes, f32_to_le_bytes(&ds.activations));
    }

    #[test]
    fn empty_and_tiny_datasets() {
        let dir = tempfile::tempdir().unwrap();
        let empty = ActivationDataset::new(3, 4, 0, "", vec![], vec![]).unwrap();
        save_dataset(&empty, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), empty);

        let one = toy(1, 4, 1, 0);
        save_dataset(&one, dir.path()).unwrap();
        assert_eq!(fs::metadata(dir.path().join(BLOB_FILE)).unwrap().len(), 16);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile(_))));

        let ds = toy(2, 4, 8, 0);
        save_dataset(&ds, dir.path()).unwrap();
        let blob = dir.path().join(BLOB_FILE);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::ShapeMismatch(_))));
        fs::write(&blob, &bytes).unwrap();

        let recs = dir.path().join(RECORDS_FILE);
        let bad = fs::read_to_string(&recs)
            .unwrap()
            .replacen("\"correct\":0", "\"correct\":4", 1);
        fs::write(&recs, bad).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::CorruptRecord { line: 1, .. })
        ));

        fs::write(&recs, "{not json}\n{}\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::CorruptRecord { .. })));

        let mut dup = ds.clone();
        dup.records[1].qid = "q0".into();
        save_dataset(&dup, dir.path()).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::DuplicateQid(q)) if q == "q0"));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy(10, 4, 2, 0);
        let spec = SplitSpec::new(0.8, 0.2, 0.0, 7).unwrap();
        let (a, b, c) = split_grouped(&ds, &spec).unwrap();
        assert_eq!((a.n_questions(), b.n_questions(), c.n_questions()), (8, 2, 0));
        let (a2, b2, _) = split_grouped(&ds, &spec).unwrap();
        assert_eq!((a, b), (a2, b2));

        let all = SplitSpec::new(1.0, 0.0, 0.0, 1).unwrap();
        let (t, _, _) = split_grouped(&ds, &all).unwrap();
        assert_eq!(t, ds);

        let empty = ActivationDataset::new(2, 4, 0, "", vec![], vec![]).unwrap();
        assert!(matches!(split_grouped(&empty, &spec), Err(Error::EmptyDataset)));
        assert!(SplitSpec::new(0.5, 0.2, 0.2, 0).is_err());
        assert!(SplitSpec::new(1.2, -0.2, 0.0, 0).is_err());
    }

    #[test]
    fn fourteen_question_partition_by_membership() {
        let ds = toy(14, 4, 2, 0);
        for seed in 0..20 {
            let spec = SplitSpec::new(0.6, 0.2, 0.2, seed).unwrap();
            let parts = split_grouped(&ds, &spec).unwrap();
            let sizes = [parts.0.n_questions(), parts.1.n_questions(), parts.2.n_questions()];
            assert!(sizes[0] == 8 || sizes[0] == 9, "{sizes:?}");
            assert_eq!(sizes.iter().sum::<usize>(), 14);
            assert_eq!((sizes[1], sizes[2]), (3, 3));
            // brute-force membership: every qid exactly once across splits
            for r in ds.records() {
                let hits = [&parts.0, &parts.1, &parts.2]
                    .iter()
                    .filter(|p| p.records().iter().any(|x| x.qid == r.qid))
                    .count();
                assert_eq!(hits, 1);
            }
        }
    }

    #[test]
    fn normalizer_examples() {
        let same = Normalizer::fit_rows(&[2.0, 5.0, 2.0, 5.0, 2.0, 5.0], 2, "t").unwrap();
        assert_eq!(same.mean, vec![2.0, 5.0]);
        assert_eq!(same.std, vec![STD_FLOOR, STD_FLOOR]);

        let n = Normalizer::fit_rows(&[0.0, 2.0], 1, "t").unwrap();
        assert_eq!((n.mean[0], n.std[0]), (1.0, 1.0));

        let n = Normalizer::fit_rows(&[-1.0, 1.0, -1.0, 1.0], 1, "t").unwrap();
        assert_eq!((n.mean[0], n.std[0]), (0.0, 1.0));

        assert!(matches!(
            Normalizer::fit_rows(&[1.0], 1, "t"),
            Err(Error::TooFewRows { got: 1, .. })
        ));

        let n = Normalizer {
            mean: vec![1.0],
            std: vec![2.0],
            fitted_on: String::new(),
        };
        assert_eq!(n.apply(&[3.0]).unwrap(), vec![1.0]);
        assert_eq!(n.apply(&[1.0]).unwrap(), vec![0.0]);
        assert_eq!(Normalizer::identity(2).apply(&[3.5, -1.0]).unwrap(), vec![3.5, -1.0]);
        assert!(matches!(n.apply(&[1.0, 2.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn normalizer_records_fitting_set_and_round_trips() {
        let ds = toy(3, 4, 5, 0);
        let n = fit_normalizer(&ds).unwrap();
        assert_eq!(n.fitted_on, ds.fingerprint());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(NORM_FILE);
        n.save(&p).unwrap();
        assert_eq!(Normalizer::load(&p).unwrap(), n);
    }

    #[test]
    fn concat_examples() {
        let a = toy(3, 4, 4, 1);
        let one = concat_layers(std::slice::from_ref(&a)).unwrap();
        assert_eq!(one.activations(), a.activations());
        assert_eq!(one.d_model(), 4);
        assert_eq!(one.layer_id(), CONCAT_LAYER_ID);

        let b = toy(3, 4, 4, 2);
        let ab = concat_layers(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.d_model(), 8);
        assert_eq!(ab.source_tag(), "concat:layers=1,2");
        for r in 0..a.n_rows() {
            assert_eq!(&ab.row(r)[..4], a.row(r));
            assert_eq!(&ab.row(r)[4..], b.row(r));
        }

        let mut swapped = b.clone();
        swapped.records.swap(0, 1);
        assert!(matches!(
            concat_layers(&[a.clone(), swapped]),
            Err(Error::QidOrderMismatch(0))
        ));
        let c = toy(3, 3, 4, 5);
        assert!(matches!(
            concat_layers(&[a.clone(), c]),
            Err(Error::OptionCountMismatch(4, 3))
        ));
        assert!(concat_layers(&[a.clone(), a]).is_err());
    }

    #[test]
    fn folds_are_balanced_and_grouped() {
        let f = grouped_folds(23, 5, 9).unwrap();
        let mut counts = [0; 5];
        f.iter().for_each(|&k| counts[k] += 1);
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
        assert_eq!(f, grouped_folds(23, 5, 9).unwrap());
        assert!(matches!(grouped_folds(3, 5, 0), Err(Error::TooFewQuestions { .. })));
    }
}
