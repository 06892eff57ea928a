//! Hashed letter-trigram features.
//!
//! Text is lowercased and split on whitespace; each token is wrapped as
//! `#token#` and cut into overlapping 3-character windows. Each window is
//! hashed with 64-bit FNV-1a into `hash_dim` buckets.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const DEFAULT_HASH_DIM: u32 = 1 << 15;

/// Sparse count vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn from_counts(counts: BTreeMap<u32, f64>) -> Self {
        Self {
            entries: counts.into_iter().collect(),
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Featurizer {
    hash_dim: u32,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self {
            hash_dim: DEFAULT_HASH_DIM,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Boundary-marked trigrams of the normalized text, in reading order.
pub fn trigrams(text: &str) -> Result<Vec<String>> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for token in lower.split_whitespace() {
        let chars: Vec<char> = std::iter::once('#')
            .chain(token.chars())
            .chain(std::iter::once('#'))
            .collect();
        out.extend(chars.windows(3).map(|w| w.iter().collect::<String>()));
    }
    if out.is_empty() {
        return Err(Error::Empty("text"));
    }
    Ok(out)
}

impl Featurizer {
    pub fn new(hash_dim: u32) -> Result<Self> {
        if hash_dim == 0 {
            return Err(Error::invalid("hash dimension must be positive"));
        }
        Ok(Self { hash_dim })
    }

    pub fn hash_dim(&self) -> u32 {
        self.hash_dim
    }

    pub fn bucket(&self, trigram: &str) -> u32 {
        (fnv1a(trigram.as_bytes()) % self.hash_dim as u64) as u32
    }

    pub fn featurize(&self, text: &str) -> Result<SparseVector> {
        let mut counts = BTreeMap::new();
        for g in trigrams(text)? {
            *counts.entry(self.bucket(&g)).or_insert(0.0) += 1.0;
        }
        Ok(SparseVector::from_counts(counts))
    }
}
