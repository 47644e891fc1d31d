//! Frozen embedding matrices: validation, the `L3EM` on-disk format, the
//! hashing fallback encoder, and alignment against task datasets.

mod format;
mod hashing;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::data::{Split, TaskDataset, Targets};

pub use format::{
    encode_file, load_embeddings, load_embeddings_with_manifest, manifest_path, store_embeddings,
    store_embeddings_for, EmbeddingManifest, HEADER_LEN, MAGIC, VERSION,
};
pub use hashing::{hash_encode, HashEncoder};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?} at byte 0 (expected \"L3EM\")")]
    BadMagic { path: PathBuf, found: Vec<u8> },
    #[error("{path}: unsupported version {found} at byte 4 (expected {VERSION})")]
    VersionMismatch { path: PathBuf, found: u32 },
    #[error("{location}: dim must be at least 1")]
    DimZero { location: String },
    #[error("{path}: payload length {actual} bytes, header implies {expected}")]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{path}: manifest sidecar not found")]
    MissingManifest { path: PathBuf },
    #[error("{path}: malformed manifest: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error("{path}: manifest {field} = {manifest} but file has {file}")]
    ManifestMismatch {
        path: PathBuf,
        field: &'static str,
        manifest: String,
        file: String,
    },
    #[error("{path}: content digest {actual} does not match manifest {expected}")]
    DigestMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("{location}: non-finite value at row {row}, column {col}")]
    NonFiniteValue {
        location: String,
        row: usize,
        col: usize,
    },
    #[error("{location}: duplicate id {id:?}")]
    DuplicateId { location: String, id: String },
    #[error("row buffer has {actual} values, expected {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("source {source_name:?} is missing embeddings for {} id(s): {}", ids.len(), MissingList(ids))]
    MissingEmbedding {
        source_name: String,
        ids: Vec<String>,
    },
}

struct MissingList<'a>(&'a [String]);

impl fmt::Display for MissingList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 20;
        let head: Vec<&str> = self.0.iter().take(SHOWN).map(String::as_str).collect();
        write!(f, "{}", head.join(", "))?;
        if self.0.len() > SHOWN {
            write!(f, ", ... ({} more)", self.0.len() - SHOWN)?;
        }
        Ok(())
    }
}

/// Dense rows of frozen representations keyed by example id.
///
/// Immutable once constructed; every row is finite and ids are unique.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    source_name: String,
    dim: usize,
    ids: Vec<String>,
    rows: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(
        source_name: impl Into<String>,
        dim: usize,
        ids: Vec<String>,
        rows: Vec<f32>,
    ) -> Result<Self, EmbeddingError> {
        Self::validated(source_name.into(), dim, ids, rows, "in-memory matrix")
    }

    pub(crate) fn validated(
        source_name: String,
        dim: usize,
        ids: Vec<String>,
        rows: Vec<f32>,
        location: &str,
    ) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::DimZero {
                location: location.to_string(),
            });
        }
        let expected = ids.len() * dim;
        if rows.len() != expected {
            return Err(EmbeddingError::ShapeMismatch {
                expected,
                actual: rows.len(),
            });
        }
        if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFiniteValue {
                location: location.to_string(),
                row: pos / dim,
                col: pos % dim,
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(EmbeddingError::DuplicateId {
                    location: location.to_string(),
                    id: id.clone(),
                });
            }
        }
        Ok(Self {
            source_name,
            dim,
            ids,
            rows,
            index,
        })
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Row-major values, `len() * dim()` of them.
    pub fn values(&self) -> &[f32] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row_by_id(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Renames the source; used when a file is loaded under a config alias.
    pub fn with_source_name(mut self, name: impl Into<String>) -> Self {
        self.source_name = name.into();
        self
    }

    /// Concatenates matrices of equal dim; ids must stay unique.
    pub fn concat(
        source_name: impl Into<String>,
        parts: &[EmbeddingMatrix],
    ) -> Result<Self, EmbeddingError> {
        let source_name = source_name.into();
        let dim = parts.first().map(|m| m.dim).unwrap_or(1);
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for part in parts {
            if part.dim != dim {
                return Err(EmbeddingError::ShapeMismatch {
                    expected: dim,
                    actual: part.dim,
                });
            }
            ids.extend(part.ids.iter().cloned());
            rows.extend_from_slice(&part.rows);
        }
        Self::validated(source_name, dim, ids, rows, "concatenated matrix")
    }
}

/// Bit-exact equality: same name, dim, ids, and identical f32 bit patterns.
impl PartialEq for EmbeddingMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.source_name == other.source_name
            && self.dim == other.dim
            && self.ids == other.ids
            && self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Feature rows and targets for one split, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub ids: Vec<String>,
    pub dim: usize,
    /// Row-major, `ids.len() * dim`.
    pub features: Vec<f64>,
    pub targets: Targets,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Pairs every id of `split` with its embedding row, in dataset order.
///
/// Fails with the complete list of ids absent from `matrix`; never returns a
/// partial view.
pub fn align(
    dataset: &TaskDataset,
    split: Split,
    matrix: &EmbeddingMatrix,
) -> Result<LabeledSet, EmbeddingError> {
    let ids = dataset.split_ids(split);
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !matrix.contains(id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(EmbeddingError::MissingEmbedding {
            source_name: matrix.source_name().to_string(),
            ids: missing,
        });
    }
    let dim = matrix.dim();
    let mut features = Vec::with_capacity(ids.len() * dim);
    for id in ids {
        let row = matrix.row_by_id(id).expect("checked above");
        features.extend(row.iter().map(|&v| f64::from(v)));
    }
    Ok(LabeledSet {
        ids: ids.to_vec(),
        dim,
        features,
        targets: dataset.targets_for(ids),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Example, TaskKind, TextFields};

    fn ids(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn toy_dataset(order: &[&str]) -> TaskDataset {
        let examples = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, id)| Example {
                id: id.to_string(),
                text: TextFields::Single(format!("text {id}")),
                label: i as f64 % 2.0,
            })
            .collect();
        TaskDataset::new(
            "toy",
            TaskKind::Classification,
            Some(2),
            examples,
            ids(order),
            vec![],
            vec![],
        )
        .unwrap()
    }

    fn toy_matrix() -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            "src",
            2,
            ids(&["a", "b", "c"]),
            vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn rejects_invalid_matrices() {
        assert!(matches!(
            EmbeddingMatrix::new("s", 0, vec![], vec![]),
            Err(EmbeddingError::DimZero { .. })
        ));
        assert!(matches!(
            EmbeddingMatrix::new("s", 2, ids(&["a", "a"]), vec![0.0; 4]),
            Err(EmbeddingError::DuplicateId { .. })
        ));
        assert!(matches!(
            EmbeddingMatrix::new("s", 2, ids(&["a"]), vec![0.0; 3]),
            Err(EmbeddingError::ShapeMismatch { .. })
        ));
        match EmbeddingMatrix::new("s", 2, ids(&["a", "b"]), vec![0.0, 0.0, 1.0, f32::INFINITY]) {
            Err(EmbeddingError::NonFiniteValue { row, col, .. }) => assert_eq!((row, col), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn align_subset_has_dataset_length() {
        let set = align(&toy_dataset(&["a", "c"]), Split::Train, &toy_matrix()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn align_follows_dataset_order() {
        let set = align(&toy_dataset(&["c", "b", "a"]), Split::Train, &toy_matrix()).unwrap();
        assert_eq!(set.ids, ids(&["c", "b", "a"]));
        assert_eq!(set.row(0), &[0.5, 0.5]);
        assert_eq!(set.row(2), &[1.0, 0.0]);
        assert_eq!(set.targets, Targets::Classes(vec![0, 1, 0]));
    }

    #[test]
    fn align_names_every_missing_id() {
        let m = EmbeddingMatrix::new("src", 2, ids(&["a"]), vec![1.0, 0.0]).unwrap();
        match align(&toy_dataset(&["a", "b", "c"]), Split::Train, &m) {
            Err(EmbeddingError::MissingEmbedding { ids: missing, .. }) => {
                assert_eq!(missing, ids(&["b", "c"]))
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
