//! Signed feature hashing over lowercased word tokens.
//!
//! Offline stand-in for a real encoder. Each token hashes (seeded FNV-1a,
//! then a splitmix64 finalizer) to a bucket `h % dim` and a sign taken from
//! the top bit; the row is the L2-normalized sum of ±1 contributions.

use super::{EmbeddingError, EmbeddingMatrix};
use crate::data::TaskDataset;
use crate::text::tokenize;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEncoder {
    dim: usize,
    seed: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::DimZero {
                location: "hash encoder".into(),
            });
        }
        Ok(Self { dim, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `(bucket, sign)` for one token.
    pub fn bucket(&self, token: &str) -> (usize, f64) {
        let h = token_hash(token, self.seed);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }

    pub fn encode_text(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        for token in tokenize(text) {
            let (i, s) = self.bucket(&token);
            acc[i] += s;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter().map(|v| (v / norm) as f32).collect()
        } else {
            vec![0.0; self.dim]
        }
    }

    pub fn encode<S: AsRef<str>>(
        &self,
        source_name: impl Into<String>,
        ids: Vec<String>,
        texts: &[S],
    ) -> Result<EmbeddingMatrix, EmbeddingError> {
        assert_eq!(ids.len(), texts.len(), "one id per text");
        let mut rows = Vec::with_capacity(texts.len() * self.dim);
        for t in texts {
            rows.extend(self.encode_text(t.as_ref()));
        }
        EmbeddingMatrix::new(source_name, self.dim, ids, rows)
    }

    /// Encodes every example of `dataset`; pair texts are joined with a space.
    pub fn encode_dataset(
        &self,
        source_name: impl Into<String>,
        dataset: &TaskDataset,
    ) -> Result<EmbeddingMatrix, EmbeddingError> {
        let ids = dataset.examples().iter().map(|e| e.id.clone()).collect();
        let texts: Vec<String> = dataset.examples().iter().map(|e| e.text.joined()).collect();
        self.encode(source_name, ids, &texts)
    }
}

/// Encodes `texts` with ids `"0"`, `"1"`, ... and source name `hash-d{dim}-s{seed}`.
pub fn hash_encode<S: AsRef<str>>(
    texts: &[S],
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    let enc = HashEncoder::new(dim, seed)?;
    let ids = (0..texts.len()).map(|i| i.to_string()).collect();
    enc.encode(format!("hash-d{dim}-s{seed}"), ids, texts)
}

fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let enc = HashEncoder::new(64, 7).unwrap();
        let a = enc.encode_text("The quick brown fox");
        let b = enc.encode_text("the QUICK, brown fox!");
        assert_eq!(a, b);
        let other = HashEncoder::new(64, 8).unwrap().encode_text("the quick brown fox");
        assert_ne!(a, other);
    }

    #[test]
    fn empty_text_is_zero_row() {
        let enc = HashEncoder::new(16, 0).unwrap();
        assert_eq!(enc.encode_text(""), vec![0.0; 16]);
    }

    #[test]
    fn rows_are_unit_norm() {
        let m = hash_encode(&["alpha beta", "gamma", "delta delta delta"], 32, 3).unwrap();
        for i in 0..m.len() {
            let n: f64 = m.row(i).iter().map(|&v| f64::from(v).powi(2)).sum();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dim_zero_rejected() {
        assert!(HashEncoder::new(0, 1).is_err());
    }
}
