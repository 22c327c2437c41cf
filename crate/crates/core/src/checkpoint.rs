//! Named parameter collections and their binary file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "HILLIE01"            8 bytes magic
//! model_kind            u8   (0 = enhancer, 1 = ranker)
//! stage                 u32
//! entry_count           u32
//! per entry:
//!   name_len            u32
//!   name                UTF-8 bytes
//!   rank                u32
//!   dims                u64 x rank
//!   values              f64 x prod(dims), row-major
//! ```

use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"HILLIE01";

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,
    #[error("truncated checkpoint: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("entry {name}: shape {shape:?} holds {expected} values but {actual} were given")]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("duplicate entry name {0}")]
    DuplicateName(String),
    #[error("unknown model kind byte {0}")]
    UnknownKind(u8),
    #[error("entry name is not valid UTF-8")]
    BadName,
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("missing entry {0}")]
    Missing(String),
    #[error("expected a {expected:?} checkpoint, found {found:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Enhancer,
    Ranker,
}

impl ModelKind {
    fn to_byte(self) -> u8 {
        match self {
            ModelKind::Enhancer => 0,
            ModelKind::Ranker => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self, CheckpointError> {
        match b {
            0 => Ok(ModelKind::Enhancer),
            1 => Ok(ModelKind::Ranker),
            other => Err(CheckpointError::UnknownKind(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered, uniquely named tensors plus the model kind and stage tag.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheckpoint {
    pub kind: ModelKind,
    pub stage: u32,
    entries: Vec<ParamEntry>,
}

impl ParamCheckpoint {
    pub fn new(kind: ModelKind, stage: u32) -> Self {
        Self {
            kind,
            stage,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<(), CheckpointError> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(CheckpointError::ShapeMismatch {
                name,
                shape,
                expected,
                actual: values.len(),
            });
        }
        if self.entries.iter().any(|e| e.name == name) {
            return Err(CheckpointError::DuplicateName(name));
        }
        self.entries.push(ParamEntry { name, shape, values });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&ParamEntry, CheckpointError> {
        self.get(name).ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<(), CheckpointError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(CheckpointError::WrongKind {
                expected: kind,
                found: self.kind,
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(self.kind.to_byte());
        out.extend_from_slice(&self.stage.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let kind = ModelKind::from_byte(r.take(1)?[0])?;
        let stage = r.u32()?;
        let count = r.u32()?;
        let mut ckpt = ParamCheckpoint::new(kind, stage);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::BadName)?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(CheckpointError::Truncated {
                    offset: r.pos,
                    needed: usize::MAX,
                })?;
            let needed = n.checked_mul(8).ok_or(CheckpointError::Truncated {
                offset: r.pos,
                needed: usize::MAX,
            })?;
            let raw = r.take(needed)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            ckpt.push(name, shape, values)?;
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(ckpt)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes via a sibling temp file and rename so readers never see a partial file.
pub fn write_checkpoint(ckpt: &ParamCheckpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    write_atomic(path.as_ref(), &ckpt.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamCheckpoint, CheckpointError> {
    ParamCheckpoint::from_bytes(&std::fs::read(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
