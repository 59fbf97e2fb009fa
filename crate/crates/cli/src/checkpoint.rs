//! Self-describing checkpoint container.
//!
//! Layout, in order:
//!
//! ```text
//! MSCKPT\n                          magic line
//! <decimal manifest length>\n       ASCII
//! <manifest JSON>                   format_version, config, provenance,
//!                                   array directory (name, shape, len)
//! <arrays>                          little-endian f64, manifest order
//! <sha-256>                         32 bytes over everything above
//! ```
//!
//! The manifest is plain text and the arrays are raw `f64` little-endian,
//! so a checkpoint is readable without any numerical library. Loading
//! verifies the whole-file checksum first (truncation or corruption fails
//! before any parsing) and refuses other format versions.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use metasurrogate_core::diffmath::{ParamSet, Tensor};
use metasurrogate_core::neural_process::NpConfig;

use crate::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"MSCKPT\n";

/// Where the parameters came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub iters: u64,
    pub seed: u64,
    /// Task-source descriptor, e.g. `functions(lengthscale=0.25)`.
    pub source: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: NpConfig,
    provenance: Provenance,
    arrays: Vec<ArrayEntry>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: NpConfig,
    pub provenance: Provenance,
    pub params: ParamSet,
}

/// Serialise parameters plus configuration to `path`.
pub fn checkpoint_save(
    params: &ParamSet,
    config: &NpConfig,
    provenance: &Provenance,
    path: &Path,
) -> Result<()> {
    let arrays: Vec<ArrayEntry> = params
        .iter()
        .map(|(name, t)| ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            len: t.len(),
        })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        provenance: provenance.clone(),
        arrays,
    };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| CliError::Other(e.to_string()))?;

    let mut bytes = Vec::with_capacity(manifest_json.len() + 64 + 8 * params.num_scalars());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(format!("{}\n", manifest_json.len()).as_bytes());
    bytes.extend_from_slice(&manifest_json);
    for (_, t) in params.iter() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Load and verify a checkpoint.
pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 32 + MAGIC.len() {
        return Err(CliError::Data(format!(
            "{}: checksum error (file too short)",
            path.display()
        )));
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != stored {
        return Err(CliError::Data(format!(
            "{}: checksum error (corrupt or truncated file)",
            path.display()
        )));
    }
    if !body.starts_with(MAGIC) {
        return Err(CliError::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let rest = &body[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::Data(format!("{}: missing manifest length", path.display())))?;
    let len: usize = std::str::from_utf8(&rest[..nl])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Data(format!("{}: bad manifest length", path.display())))?;
    let manifest_bytes = &rest[nl + 1..nl + 1 + len];
    let manifest: Manifest = serde_json::from_slice(manifest_bytes)
        .map_err(|e| CliError::Data(format!("{}: bad manifest: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CliError::Config(format!(
            "{}: unsupported checkpoint format_version {} (this build reads {})",
            path.display(),
            manifest.format_version,
            FORMAT_VERSION
        )));
    }

    let mut cursor = nl + 1 + len;
    let data = rest;
    let mut params = ParamSet::new();
    for entry in &manifest.arrays {
        let need = entry.len * 8;
        if cursor + need > data.len() {
            return Err(CliError::Data(format!(
                "{}: array {} runs past end of file",
                path.display(),
                entry.name
            )));
        }
        let mut values = Vec::with_capacity(entry.len);
        for chunk in data[cursor..cursor + need].chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
        }
        cursor += need;
        let tensor = Tensor::new(entry.shape.clone(), values)
            .map_err(|e| CliError::Data(format!("{}: array {}: {e}", path.display(), entry.name)))?;
        params
            .insert(entry.name.clone(), tensor)
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(Checkpoint {
        config: manifest.config,
        provenance: manifest.provenance,
        params,
    })
}

/// Field-by-field comparison against an expected configuration; the first
/// differing field is named in the error.
pub fn check_config_matches(loaded: &NpConfig, expected: &NpConfig) -> Result<()> {
    macro_rules! check {
        ($field:ident) => {
            if loaded.$field != expected.$field {
                return Err(CliError::Config(format!(
                    "checkpoint config mismatch on field `{}`: checkpoint has {:?}, config wants {:?}",
                    stringify!($field),
                    loaded.$field,
                    expected.$field
                )));
            }
        };
    }
    check!(input_dim);
    check!(output_dim);
    check!(encoder_hidden);
    check!(repr_dim);
    check!(latent_hidden);
    check!(latent_dim);
    check!(decoder_hidden);
    check!(min_sigma);
    check!(max_sigma);
    check!(max_context_size);
    check!(aggregator);
    check!(activation);
    check!(embedding);
    Ok(())
}
