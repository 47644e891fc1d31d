//! `L3EM` binary embedding files.
//!
//! Layout (little-endian):
//!
//! | offset | size        | field                         |
//! |--------|-------------|-------------------------------|
//! | 0      | 4           | magic `"L3EM"`                |
//! | 4      | 4           | version `u32` = 1             |
//! | 8      | 4           | dim `u32`                     |
//! | 12     | 8           | count `u64`                   |
//! | 20     | 4·count·dim | `f32` values, row-major       |
//!
//! A JSON sidecar at `<path>.manifest.json` carries the ids and the SHA-256
//! of the whole binary file (header included).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingError, EmbeddingMatrix};
use crate::fsutil::{with_appended_suffix, write_atomic};

pub const MAGIC: &[u8; 4] = b"L3EM";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingManifest {
    pub source_name: String,
    pub dataset_name: String,
    pub split_name: String,
    pub dim: u64,
    pub count: u64,
    pub ids: Vec<String>,
    pub content_digest: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    with_appended_suffix(path, ".manifest.json")
}

/// Serializes header and payload.
pub fn encode_file(matrix: &EmbeddingMatrix) -> Vec<u8> {
    encode_raw(matrix.dim() as u32, matrix.len() as u64, matrix.values())
}

pub(crate) fn encode_raw(dim: u32, count: u64, values: &[f32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub(crate) fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `matrix` and its manifest with empty dataset and split names.
pub fn store_embeddings(
    matrix: &EmbeddingMatrix,
    path: &Path,
) -> Result<EmbeddingManifest, EmbeddingError> {
    store_embeddings_for(matrix, path, "", "")
}

pub fn store_embeddings_for(
    matrix: &EmbeddingMatrix,
    path: &Path,
    dataset_name: &str,
    split_name: &str,
) -> Result<EmbeddingManifest, EmbeddingError> {
    let bytes = encode_file(matrix);
    let manifest = EmbeddingManifest {
        source_name: matrix.source_name().to_string(),
        dataset_name: dataset_name.to_string(),
        split_name: split_name.to_string(),
        dim: matrix.dim() as u64,
        count: matrix.len() as u64,
        ids: matrix.ids().to_vec(),
        content_digest: digest_hex(&bytes),
    };
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EmbeddingError::Io { path, source }
    };
    write_atomic(path, &bytes).map_err(io_err(path))?;
    let mpath = manifest_path(path);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&mpath, &json).map_err(io_err(&mpath))?;
    Ok(manifest)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix, EmbeddingError> {
    load_embeddings_with_manifest(path).map(|(m, _)| m)
}

/// Loads and fully validates a file against its manifest.
///
/// Check order: header, payload length, manifest agreement, digest, values.
pub fn load_embeddings_with_manifest(
    path: &Path,
) -> Result<(EmbeddingMatrix, EmbeddingManifest), EmbeddingError> {
    let bytes = fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let pb = || path.to_path_buf();

    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(EmbeddingError::BadMagic {
            path: pb(),
            found: bytes.iter().take(4).copied().collect(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(EmbeddingError::LengthMismatch {
            path: pb(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(EmbeddingError::VersionMismatch {
            path: pb(),
            found: version,
        });
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as u64;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if dim == 0 {
        return Err(EmbeddingError::DimZero {
            location: format!("{} at byte 8", path.display()),
        });
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN as u64));
    if expected != Some(bytes.len() as u64) {
        return Err(EmbeddingError::LengthMismatch {
            path: pb(),
            expected: expected.unwrap_or(u64::MAX),
            actual: bytes.len() as u64,
        });
    }

    let mpath = manifest_path(path);
    let raw = match fs::read(&mpath) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(EmbeddingError::MissingManifest { path: mpath })
        }
        Err(source) => return Err(EmbeddingError::Io { path: mpath, source }),
    };
    let manifest: EmbeddingManifest =
        serde_json::from_slice(&raw).map_err(|e| EmbeddingError::ManifestParse {
            path: mpath.clone(),
            message: e.to_string(),
        })?;
    let mismatch = |field, manifest: u64, file: u64| EmbeddingError::ManifestMismatch {
        path: mpath.clone(),
        field,
        manifest: manifest.to_string(),
        file: file.to_string(),
    };
    if manifest.dim != dim {
        return Err(mismatch("dim", manifest.dim, dim));
    }
    if manifest.count != count {
        return Err(mismatch("count", manifest.count, count));
    }
    if manifest.ids.len() as u64 != count {
        return Err(mismatch("ids", manifest.ids.len() as u64, count));
    }
    let actual = digest_hex(&bytes);
    if !actual.eq_ignore_ascii_case(&manifest.content_digest) {
        return Err(EmbeddingError::DigestMismatch {
            path: pb(),
            expected: manifest.content_digest.clone(),
            actual,
        });
    }

    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        let d = dim as usize;
        return Err(EmbeddingError::NonFiniteValue {
            location: format!("{} at byte {}", path.display(), HEADER_LEN + pos * 4),
            row: pos / d,
            col: pos % d,
        });
    }
    let matrix = EmbeddingMatrix::validated(
        manifest.source_name.clone(),
        dim as usize,
        manifest.ids.clone(),
        values,
        &mpath.display().to_string(),
    )?;
    Ok((matrix, manifest))
}
