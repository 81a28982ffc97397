//! On-disk formats: checkpoints, trajectories and sequence directories.
//!
//! Text is used wherever possible. Floats are written in Rust's shortest
//! round-trip form, so every text format reads back bit-for-bit. Image
//! payloads and checkpoint tensors are little-endian `f64`.

mod checkpoint;
mod sequence;
mod trajectory;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use sequence::{read_sequence, write_sequence};
pub use trajectory::{parse_trajectory, read_trajectory, write_trajectory, write_trajectory_to};

use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("missing {0}")]
    Missing(PathBuf),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Schema { path: PathBuf, msg: String },
    #[error("{0}: not a checkpoint (bad magic)")]
    BadMagic(PathBuf),
    #[error("{path}: checkpoint version {found}, this build reads version {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: corrupt checkpoint: {msg}")]
    Corrupt { path: PathBuf, msg: String },
}

impl FormatError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            FormatError::Missing(path.to_path_buf())
        } else {
            FormatError::Io { path: path.to_path_buf(), source }
        }
    }

    pub(crate) fn schema(path: &Path, msg: impl Into<String>) -> Self {
        FormatError::Schema { path: path.to_path_buf(), msg: msg.into() }
    }
}

/// TOML integers are signed 64-bit, so seeds are stored as decimal strings.
pub(crate) mod u64_text {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(|_| D::Error::custom(format!("invalid unsigned integer {text:?}")))
    }
}

/// Parses exactly `N` whitespace- or comma-separated floats.
pub(crate) fn parse_floats<const N: usize>(text: &str, sep: char, path: &Path, line: usize) -> Result<[f64; N], FormatError> {
    let err = |msg: String| FormatError::Parse { path: path.to_path_buf(), line, msg };
    let fields: Vec<&str> =
        if sep == ' ' { text.split_whitespace().collect() } else { text.split(sep).map(str::trim).collect() };
    if fields.len() != N {
        return Err(err(format!("expected {N} fields, found {}", fields.len())));
    }
    let mut out = [0.0; N];
    for (i, f) in fields.iter().enumerate() {
        out[i] = f.parse().map_err(|_| err(format!("field {} ({f:?}) is not a number", i + 1)))?;
    }
    Ok(out)
}
