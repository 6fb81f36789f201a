//! Versioned little-endian model container shared by the VAE and the CNN.
//!
//! Layout:
//!
//! ```text
//! "TMVA"  u32 version
//! u32 len, architecture JSON (object with a "kind" field)
//! u32 tensor count, then per tensor: u32 rank, u32 dims..., f32 data
//! u32 len, metadata JSON
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TMVA";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("corrupt checkpoint: truncated while reading {0}")]
    Truncated(&'static str),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
}

/// Training provenance stored after the tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub epochs_run: usize,
    #[serde(default)]
    pub final_losses: BTreeMap<String, f64>,
    pub seed: u64,
    #[serde(default)]
    pub split_seed: Option<u64>,
    pub class_labels: Vec<String>,
}

/// A decoded container before it is turned into a model.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub kind: String,
    pub architecture: serde_json::Value,
    pub tensors: Vec<Tensor>,
    pub metadata: CheckpointMetadata,
}

impl RawCheckpoint {
    /// Deserialises the architecture after checking `kind`.
    pub fn architecture_as<T: for<'de> Deserialize<'de>>(&self, kind: &str) -> Result<T, CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::ArchitectureMismatch(format!(
                "checkpoint holds a {:?} model, expected {kind:?}",
                self.kind
            )));
        }
        serde_json::from_value(self.architecture.clone())
            .map_err(|e| CheckpointError::ArchitectureMismatch(format!("unreadable architecture: {e}")))
    }

    /// Checks every tensor shape against the model built from the architecture.
    pub fn expect_shapes(&self, expected: &[Vec<usize>]) -> Result<(), CheckpointError> {
        if expected.len() != self.tensors.len() {
            return Err(CheckpointError::ArchitectureMismatch(format!(
                "architecture needs {} tensors, file has {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (i, (t, e)) in self.tensors.iter().zip(expected).enumerate() {
            if t.shape() != e.as_slice() {
                return Err(CheckpointError::ArchitectureMismatch(format!(
                    "tensor {i}: expected shape {e:?}, file has {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode<A: Serialize>(
    kind: &str,
    architecture: &A,
    tensors: &[&Tensor],
    metadata: &CheckpointMetadata,
) -> Result<Vec<u8>, CheckpointError> {
    let mut arch = serde_json::to_value(architecture).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let obj = arch
        .as_object_mut()
        .ok_or_else(|| CheckpointError::Corrupt("architecture must serialise to a JSON object".into()))?;
    obj.insert("kind".into(), serde_json::Value::String(kind.into()));
    let arch = serde_json::to_vec(&arch).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let meta = serde_json::to_vec(metadata).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, arch.len() as u32);
    out.extend_from_slice(&arch);
    put_u32(&mut out, tensors.len() as u32);
    for t in tensors {
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<RawCheckpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let n = r.u32("architecture length")? as usize;
    let mut architecture: serde_json::Value = serde_json::from_slice(r.take(n, "architecture")?)
        .map_err(|e| CheckpointError::Corrupt(format!("architecture JSON: {e}")))?;
    let kind = architecture
        .as_object_mut()
        .and_then(|o| o.remove("kind"))
        .and_then(|k| k.as_str().map(str::to_owned))
        .ok_or_else(|| CheckpointError::Corrupt("architecture has no \"kind\"".into()))?;

    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(CheckpointError::Corrupt(format!("tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dims")? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|l| l.checked_mul(4))
            .ok_or_else(|| CheckpointError::Corrupt(format!("tensor shape {shape:?} overflows")))?;
        let raw = r.take(len, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?);
    }
    let n = r.u32("metadata length")? as usize;
    let metadata = serde_json::from_slice(r.take(n, "metadata")?)
        .map_err(|e| CheckpointError::Corrupt(format!("metadata JSON: {e}")))?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(RawCheckpoint {
        kind,
        architecture,
        tensors,
        metadata,
    })
}

pub fn read_file(path: &Path) -> Result<RawCheckpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    decode(&bytes)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    std::fs::write(path, bytes).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
