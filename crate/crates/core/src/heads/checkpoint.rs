//! `L3HD` head checkpoints.
//!
//! Little-endian: magic `"L3HD"`, version `u32` = 1, kind `u32`
//! (0 linear, 1 mlp1), in_dim `u32`, hidden `u32` (0 for linear), out_dim
//! `u32`, task kind `u32` (0 classification, 1 regression), parameter count
//! `u64`, then the parameters as `f32`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{Head, HeadKind};
use crate::data::TaskKind;
use crate::fsutil::write_atomic;

pub const HEAD_MAGIC: &[u8; 4] = b"L3HD";
const HEAD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad head checkpoint: {0}")]
    Format(String),
    #[error("head parameter {index} is not representable as a finite f32")]
    NotRepresentable { index: usize },
}

pub fn write_head<W: Write>(head: &Head, mut w: W) -> std::io::Result<()> {
    let (kind, hidden) = match head.kind {
        HeadKind::Linear => (0u32, 0u32),
        HeadKind::Mlp1 { hidden } => (1, hidden as u32),
    };
    let task = match head.task_kind {
        TaskKind::Classification => 0u32,
        TaskKind::Regression => 1,
    };
    w.write_all(HEAD_MAGIC)?;
    for v in [HEAD_VERSION, kind, head.in_dim as u32, hidden, head.out_dim as u32, task] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(head.params.len() as u64).to_le_bytes())?;
    for p in &head.params {
        w.write_all(&(*p as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_head<R: Read>(mut r: R) -> Result<Head, CheckpointError> {
    let fmt = |m: &str| CheckpointError::Format(m.to_string());
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    if buf.len() < 36 || &buf[..4] != HEAD_MAGIC {
        return Err(fmt("missing L3HD header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    if u32_at(4) != HEAD_VERSION {
        return Err(CheckpointError::Format(format!("unsupported version {}", u32_at(4))));
    }
    let kind = match (u32_at(8), u32_at(16)) {
        (0, _) => HeadKind::Linear,
        (1, hidden) => HeadKind::Mlp1 {
            hidden: hidden as usize,
        },
        (k, _) => return Err(CheckpointError::Format(format!("unknown head kind {k}"))),
    };
    let task_kind = match u32_at(24) {
        0 => TaskKind::Classification,
        1 => TaskKind::Regression,
        t => return Err(CheckpointError::Format(format!("unknown task kind {t}"))),
    };
    let (in_dim, out_dim) = (u32_at(12) as usize, u32_at(20) as usize);
    let count = u64::from_le_bytes(buf[28..36].try_into().unwrap()) as usize;
    // Validates dims and yields the expected parameter count.
    let template = Head::init(kind, in_dim, out_dim, task_kind, 0)
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    if count != template.param_count() || buf.len() != 36 + count * 4 {
        return Err(fmt("parameter count does not match header dims"));
    }
    let params: Vec<f64> = buf[36..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(fmt("non-finite parameter"));
    }
    Ok(Head::from_parts(kind, in_dim, out_dim, task_kind, params))
}

/// Writes a checkpoint; fails if any parameter would change when narrowed to `f32`.
pub fn save_head(head: &Head, path: &Path) -> Result<(), CheckpointError> {
    if let Some(index) = head
        .params
        .iter()
        .position(|p| f64::from(*p as f32) != *p || !p.is_finite())
    {
        return Err(CheckpointError::NotRepresentable { index });
    }
    let mut bytes = Vec::new();
    write_head(head, &mut bytes).expect("write to Vec");
    write_atomic(path, &bytes).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_head(path: &Path) -> Result<Head, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_head(bytes.as_slice()).map_err(|e| match e {
        CheckpointError::Format(m) => CheckpointError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
