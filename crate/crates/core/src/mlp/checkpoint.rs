//! Single-file model checkpoints: one JSON header line, then the parameters
//! as little-endian f64 in [`MlpModel::param_blocks`] order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{init_model, Activation, Arch, InitScheme, InitSpec, MlpModel, ModelOptions};
use crate::datagen::sha256_hex;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "slabbench-mlp";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    input_dim: usize,
    arch: Arch,
    activation: Activation,
    freeze_output: bool,
    use_bias: bool,
    seed: u64,
    n_params: usize,
    sha256: String,
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(8 * model.num_params());
    for block in model.param_blocks() {
        for x in block {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = Header {
        format: FORMAT_NAME.into(),
        version: CHECKPOINT_VERSION,
        input_dim: model.input_dim(),
        arch: model.arch,
        activation: model.activation,
        freeze_output: model.freeze_output,
        use_bias: model.use_bias,
        seed: model.seed,
        n_params: model.num_params(),
        sha256: sha256_hex(&payload),
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(b"\n")?;
    f.write_all(&payload)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format {
            path: path.into(),
            reason: "missing header line".into(),
        })?;
    let value: serde_json::Value = serde_json::from_slice(&bytes[..nl])?;
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(value)?;
    if header.format != FORMAT_NAME {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("unexpected format tag `{}`", header.format),
        });
    }
    let payload = &bytes[nl + 1..];
    let expected = 8 * header.n_params as u64;
    if (payload.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: payload.len() as u64,
        });
    }
    let digest = sha256_hex(payload);
    if digest != header.sha256 || payload.len() as u64 != expected {
        return Err(Error::Checksum {
            path: path.into(),
            expected: header.sha256,
            found: digest,
        });
    }
    let opts = ModelOptions {
        activation: header.activation,
        init: InitSpec::new(InitScheme::Custom { variance: 0.0 }),
        freeze_output: header.freeze_output,
        use_bias: header.use_bias,
    };
    let mut model = init_model(header.input_dim, header.arch, &opts, header.seed)?;
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    model.set_flat_params(&params)?;
    Ok(model)
}
