//! `sae.json` + `weights.f32` persistence.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::SaeModel;
use crate::dataset::{ensure_dir, f32_from_le_bytes, f32_to_le_bytes, write_file, Normalizer};
use crate::error::{Error, Result};

pub const SAE_FORMAT: &str = "SAE1";
pub const SAE_FILE: &str = "sae.json";
pub const SAE_WEIGHTS_FILE: &str = "weights.f32";

#[derive(Debug, Serialize, Deserialize)]
struct SaeHeader {
    format: String,
    d: usize,
    #[serde(rename = "D")]
    n_features: usize,
    lambda: f64,
    seed: u64,
    checksum: u32,
    normalizer: Normalizer,
}

pub fn save_sae(m: &SaeModel<f32>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let blob = f32_to_le_bytes(&m.params().concat());
    let header = SaeHeader {
        format: SAE_FORMAT.into(),
        d: m.d,
        n_features: m.n_features,
        lambda: m.lambda,
        seed: m.seed,
        checksum: crc32fast::hash(&blob),
        normalizer: m.normalizer.clone(),
    };
    write_file(&dir.join(SAE_WEIGHTS_FILE), &blob)?;
    let json = serde_json::to_string_pretty(&header).expect("sae header serializes");
    write_file(&dir.join(SAE_FILE), json.as_bytes())
}

pub fn load_sae(dir: impl AsRef<Path>) -> Result<SaeModel<f32>> {
    let dir = dir.as_ref();
    let header_path = dir.join(SAE_FILE);
    let blob_path = dir.join(SAE_WEIGHTS_FILE);
    for p in [&header_path, &blob_path] {
        if !p.is_file() {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    let raw = fs::read(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let value: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| Error::json(&header_path, e))?;
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != SAE_FORMAT {
        return Err(Error::UnsupportedVersion(format.to_string()));
    }
    let h: SaeHeader = serde_json::from_value(value).map_err(|e| Error::json(&header_path, e))?;
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let computed = crc32fast::hash(&blob);
    if computed != h.checksum {
        return Err(Error::ChecksumMismatch {
            stored: h.checksum,
            computed,
        });
    }
    let (d, nf) = (h.d, h.n_features);
    if d == 0 || nf == 0 {
        return Err(Error::BadWidth(format!("sae {d} -> {nf}")));
    }
    let want = 2 * d * nf + nf + d;
    if blob.len() != 4 * want {
        return Err(Error::ShapeMismatch(format!(
            "{} bytes for d={d}, D={nf}; expected {}",
            blob.len(),
            4 * want
        )));
    }
    if h.normalizer.dim() != d {
        return Err(Error::DimMismatch {
            expected: d,
            got: h.normalizer.dim(),
        });
    }
    let flat = f32_from_le_bytes(&blob);
    let mut at = 0;
    let mut take = |n: usize| {
        let v = flat[at..at + n].to_vec();
        at += n;
        v
    };
    Ok(SaeModel {
        d,
        n_features: nf,
        w_enc: take(nf * d),
        b_enc: take(nf),
        w_dec: take(d * nf),
        b_dec: take(d),
        lambda: h.lambda,
        seed: h.seed,
        normalizer: h.normalizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let m = SaeModel::<f32>::init(3, 12, 0.05, 4, Normalizer::identity(3)).unwrap();
        save_sae(&m, dir.path()).unwrap();
        let back = load_sae(dir.path()).unwrap();
        assert_eq!(back, m);

        let json = fs::read_to_string(dir.path().join(SAE_FILE)).unwrap();
        assert!(json.contains("\"D\": 12"));

        let wp = dir.path().join(SAE_WEIGHTS_FILE);
        let mut blob = fs::read(&wp).unwrap();
        blob[5] ^= 0x40;
        fs::write(&wp, &blob).unwrap();
        assert!(matches!(load_sae(dir.path()), Err(Error::ChecksumMismatch { .. })));

        fs::write(dir.path().join(SAE_FILE), json.replace("SAE1", "SAE9")).unwrap();
        assert!(matches!(load_sae(dir.path()), Err(Error::UnsupportedVersion(_))));
        fs::remove_file(&wp).unwrap();
        assert!(matches!(load_sae(dir.path()), Err(Error::MissingFile(_))));
    }
}
