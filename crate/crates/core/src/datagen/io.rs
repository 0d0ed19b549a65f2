//! Dataset persistence: `<stem>.bin` holds little-endian f64 pre-rotation
//! features (row-major), then i8 labels, then the row-major rotation matrix
//! if present; `<stem>.json` holds the header with a SHA-256 of the binary.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::Dataset;
use super::spec::DatasetSpec;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "slabbench-dataset";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    spec: DatasetSpec,
    seed: u64,
    n: usize,
    d: usize,
    has_rotation: bool,
    bin_bytes: u64,
    sha256: String,
}

fn paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("bin"), path.with_extension("json"))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `<path>.bin` and `<path>.json` (any extension on `path` is replaced).
pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let (bin_path, json_path) = paths(path);
    let (n, d) = data.raw.dim();
    let rot_len = data.rotation.as_ref().map_or(0, |_| d * d);
    let mut bytes = Vec::with_capacity(8 * (n * d + rot_len) + n);
    for x in data.raw.iter() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    for &y in data.labels.iter() {
        bytes.push(if y > 0.0 { 1i8 } else { -1i8 } as u8);
    }
    if let Some(q) = &data.rotation {
        for x in q.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        spec: data.spec.clone(),
        seed: data.seed,
        n,
        d,
        has_rotation: data.rotation.is_some(),
        bin_bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    };
    if let Some(dir) = bin_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&bin_path, &bytes)?;
    fs::write(&json_path, serde_json::to_string_pretty(&header)? + "\n")?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let (bin_path, json_path) = paths(path);
    let text = fs::read_to_string(&json_path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    // Check the version before the full schema so old files get a version error.
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format {
            path: json_path.clone(),
            reason: "missing `version`".into(),
        })?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(value)?;
    if header.format != FORMAT_NAME {
        return Err(Error::Format {
            path: json_path,
            reason: format!("unexpected format tag `{}`", header.format),
        });
    }
    let bytes = fs::read(&bin_path)?;
    let (n, d) = (header.n, header.d);
    let expected = (8 * n * d + n + if header.has_rotation { 8 * d * d } else { 0 }) as u64;
    if expected != header.bin_bytes {
        return Err(Error::Format {
            path: json_path,
            reason: format!(
                "header size {} disagrees with shape ({n}, {d})",
                header.bin_bytes
            ),
        });
    }
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: bin_path,
            expected,
            found: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Format {
            path: bin_path,
            reason: format!("{} trailing bytes", bytes.len() as u64 - expected),
        });
    }
    let digest = sha256_hex(&bytes);
    if digest != header.sha256 {
        return Err(Error::Checksum {
            path: bin_path,
            expected: header.sha256,
            found: digest,
        });
    }
    let f64_at = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
    let raw = Array2::from_shape_fn((n, d), |(r, c)| f64_at(r * d + c));
    let label_off = 8 * n * d;
    let mut labels = Array1::<f64>::zeros(n);
    for i in 0..n {
        labels[i] = match bytes[label_off + i] as i8 {
            1 => 1.0,
            -1 => -1.0,
            other => {
                return Err(Error::Format {
                    path: bin_path,
                    reason: format!("label {other} at row {i}"),
                })
            }
        };
    }
    let rotation = header.has_rotation.then(|| {
        let off = label_off + n;
        Array2::from_shape_fn((d, d), |(r, c)| {
            let i = off + 8 * (r * d + c);
            f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap())
        })
    });
    Ok(Dataset::from_parts(
        header.spec,
        header.seed,
        raw,
        labels,
        rotation,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, PresetOptions};

    fn sample() -> Dataset {
        let spec = DatasetSpec::preset(
            "^lms-7",
            &PresetOptions {
                d: 6,
                rotation_seed: Some(11),
                ..Default::default()
            },
        )
        .unwrap();
        generate_dataset(&spec, 64, 5).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data = sample();
        let path = dir.path().join("set");
        save_dataset(&data, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), data);
    }

    #[test]
    fn detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set");
        save_dataset(&sample(), &path).unwrap();
        let bin = path.with_extension("bin");
        let mut bytes = fs::read(&bin).unwrap();
        bytes[3] ^= 0x10;
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Checksum { .. })));
        fs::write(&bin, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn rejects_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set");
        save_dataset(&sample(), &path).unwrap();
        let json = path.with_extension("json");
        let text = fs::read_to_string(&json)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 0");
        fs::write(&json, text).unwrap();
        match load_dataset(&path) {
            Err(Error::VersionMismatch { found, expected }) => {
                assert_eq!((found, expected), (0, FORMAT_VERSION));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
