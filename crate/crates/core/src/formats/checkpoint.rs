use super::FormatError;
use crate::model::{ModelConfig, VinetParams};
use crate::nn::{OptimizerKind, OptimizerState, Tensor};
use crate::training::JointOptimizer;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const MAGIC: &[u8; 8] = b"VINETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: VinetParams,
    /// Full-pose and frame-to-frame optimizer states.
    pub optimizer: Option<JointOptimizer>,
    pub epoch: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(with = "super::u64_text")]
    seed: u64,
    epoch: u64,
    model: ModelConfig,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    pose_rate: f64,
    twist_rate: f64,
    kind: OptimizerKind,
}

/// Layout: magic, version (u32), body length (u64), body, CRC-32 of body.
/// The body is a TOML header followed by named tensors and optimizer
/// accumulators, all little-endian.
pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let header = Header {
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        model: ckpt.config.clone(),
        optimizer: ckpt.optimizer.as_ref().map(|o| OptimizerHeader {
            pose_rate: o.pose.learning_rate,
            twist_rate: o.twist.learning_rate,
            kind: o.pose.kind,
        }),
    };
    let text = toml::to_string(&header).expect("checkpoint header serializes");
    let mut body = Vec::new();
    put_bytes(&mut body, text.as_bytes());
    let tensors = ckpt.params.tensors();
    body.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for p in &tensors {
        put_bytes(&mut body, p.name.as_bytes());
        put_tensor(&mut body, p.tensor);
    }
    if let Some(o) = &ckpt.optimizer {
        for state in [&o.pose, &o.twist] {
            body.extend_from_slice(&(state.accumulators.len() as u32).to_le_bytes());
            for acc in &state.accumulators {
                put_floats(&mut body, acc);
            }
        }
    }
    let mut out = Vec::with_capacity(body.len() + 24);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), FormatError> {
    fs::write(path, write_checkpoint(ckpt)).map_err(|e| FormatError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    read_checkpoint(&bytes, path)
}

/// Decodes checkpoint bytes; `path` is only used in diagnostics.
pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint, FormatError> {
    let corrupt = |msg: &str| FormatError::Corrupt { path: path.to_path_buf(), msg: msg.to_string() };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(FormatError::BadMagic(path.to_path_buf()));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let version = r.u32().ok_or_else(|| corrupt("truncated before version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::VersionMismatch { path: path.to_path_buf(), found: version, expected: CHECKPOINT_VERSION });
    }
    let len = r.u64().ok_or_else(|| corrupt("truncated before body length"))? as usize;
    let body = r.take(len).ok_or_else(|| corrupt("truncated body"))?;
    let crc = r.u32().ok_or_else(|| corrupt("truncated checksum"))?;
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes after checksum"));
    }
    if crc32fast::hash(body) != crc {
        return Err(corrupt("checksum mismatch"));
    }

    let mut r = Reader { bytes: body, pos: 0 };
    let text = r.bytes_field().ok_or_else(|| corrupt("truncated header"))?;
    let text = std::str::from_utf8(text).map_err(|_| corrupt("header is not UTF-8"))?;
    let header: Header = toml::from_str(text).map_err(|e| corrupt(&format!("header: {e}")))?;
    let mut params = VinetParams::zeros(&header.model).map_err(|e| corrupt(&e.to_string()))?;
    let count = r.u32().ok_or_else(|| corrupt("truncated tensor count"))? as usize;
    {
        let mut slots = params.tensors_mut();
        if count != slots.len() {
            return Err(corrupt(&format!("{count} tensors stored, the model has {}", slots.len())));
        }
        for slot in slots.iter_mut() {
            let name = r.bytes_field().ok_or_else(|| corrupt("truncated tensor name"))?;
            if name != slot.name.as_bytes() {
                return Err(corrupt(&format!("expected tensor {}, found {}", slot.name, String::from_utf8_lossy(name))));
            }
            let t = r.tensor().ok_or_else(|| corrupt(&format!("truncated tensor {}", slot.name)))?;
            if t.shape() != slot.tensor.shape() {
                return Err(corrupt(&format!("tensor {} has shape {:?}, expected {:?}", slot.name, t.shape(), slot.tensor.shape())));
            }
            *slot.tensor = t;
        }
    }
    let optimizer = match header.optimizer {
        None => None,
        Some(h) => {
            let mut states = Vec::with_capacity(2);
            for rate in [h.pose_rate, h.twist_rate] {
                let n = r.u32().ok_or_else(|| corrupt("truncated optimizer state"))? as usize;
                let accumulators =
                    (0..n).map(|_| r.floats()).collect::<Option<Vec<_>>>().ok_or_else(|| corrupt("truncated accumulators"))?;
                states.push(OptimizerState { learning_rate: rate, kind: h.kind, accumulators });
            }
            let twist = states.pop().expect("two states");
            let pose = states.pop().expect("two states");
            Some(JointOptimizer { pose, twist })
        }
    };
    if r.pos != body.len() {
        return Err(corrupt("unexpected bytes at end of body"));
    }
    Ok(Checkpoint { config: header.model, params, optimizer, epoch: header.epoch, seed: header.seed })
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

fn put_floats(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    put_floats(out, t.data());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn bytes_field(&mut self) -> Option<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn floats(&mut self) -> Option<Vec<f64>> {
        let n = usize::try_from(self.u64()?).ok()?;
        let raw = self.take(n.checked_mul(8)?)?;
        Some(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn tensor(&mut self) -> Option<Tensor> {
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Option<Vec<_>>>()?;
        let data = self.floats()?;
        Tensor::from_vec(&shape, data).ok()
    }
}
