//! `probe.json` + `weights.f32` persistence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::MlpProbe;
use crate::dataset::{ensure_dir, f32_from_le_bytes, f32_to_le_bytes, write_file, Normalizer};
use crate::error::{Error, Result};

pub const PROBE_FORMAT: &str = "PROBE1";
pub const PROBE_FILE: &str = "probe.json";
pub const WEIGHTS_FILE: &str = "weights.f32";

#[derive(Debug, Serialize, Deserialize)]
struct ProbeHeader {
    format: String,
    dims: Vec<usize>,
    dropout_p: f64,
    seed: u64,
    normalizer: Normalizer,
    tensor_order: Vec<String>,
    checksum: u32,
}

fn tensor_order(layers: usize) -> Vec<String> {
    (0..layers)
        .flat_map(|l| [format!("W{l}"), format!("b{l}")])
        .collect()
}

pub fn save_probe(probe: &MlpProbe, normalizer: &Normalizer, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let flat: Vec<f32> = probe.params().concat();
    let blob = f32_to_le_bytes(&flat);
    let header = ProbeHeader {
        format: PROBE_FORMAT.into(),
        dims: probe.dims().to_vec(),
        dropout_p: probe.dropout_p(),
        seed: probe.seed(),
        normalizer: normalizer.clone(),
        tensor_order: tensor_order(probe.n_layers()),
        checksum: crc32fast::hash(&blob),
    };
    write_file(&dir.join(WEIGHTS_FILE), &blob)?;
    let json = serde_json::to_string_pretty(&header).expect("probe header serializes");
    write_file(&dir.join(PROBE_FILE), json.as_bytes())
}

pub fn load_probe(dir: impl AsRef<Path>) -> Result<(MlpProbe, Normalizer)> {
    let dir = dir.as_ref();
    let header_path = dir.join(PROBE_FILE);
    let blob_path = dir.join(WEIGHTS_FILE);
    for p in [&header_path, &blob_path] {
        if !p.is_file() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let raw = fs::read(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let value: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| Error::json(&header_path, e))?;
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != PROBE_FORMAT {
        return Err(Error::UnsupportedVersion(format.to_string()));
    }
    let header: ProbeHeader =
        serde_json::from_value(value).map_err(|e| Error::json(&header_path, e))?;

    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let computed = crc32fast::hash(&blob);
    if computed != header.checksum {
        return Err(Error::ChecksumMismatch {
            stored: header.checksum,
            computed,
        });
    }
    let dims = &header.dims;
    if dims.len() < 2 {
        return Err(Error::BadWidth(format!("dims {dims:?}")));
    }
    if header.tensor_order != tensor_order(dims.len() - 1) {
        return Err(Error::ShapeMismatch("unexpected tensor order".into()));
    }
    let want: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let flat = f32_from_le_bytes(&blob);
    if blob.len() != 4 * want {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for dims {dims:?}, expected {want}",
            flat.len()
        )));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut at = 0;
    for w in dims.windows(2) {
        weights.push(flat[at..at + w[0] * w[1]].to_vec());
        at += w[0] * w[1];
        biases.push(flat[at..at + w[1]].to_vec());
        at += w[1];
    }
    if header.normalizer.dim() != dims[0] {
        return Err(Error::DimMismatch {
            expected: dims[0],
            got: header.normalizer.dim(),
        });
    }
    let probe = MlpProbe::from_parts(dims.clone(), weights, biases, header.dropout_p, header.seed)?;
    Ok((probe, header.normalizer))
}
