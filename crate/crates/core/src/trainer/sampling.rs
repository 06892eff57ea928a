use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A clicked query-keyword pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClickPair {
    pub query: String,
    pub keyword: String,
}

impl ClickPair {
    pub fn new(query: impl Into<String>, keyword: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            keyword: keyword.into(),
        }
    }
}

/// One positive pair and keywords shown against the same query as negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGroup {
    pub positive: ClickPair,
    pub negatives: Vec<String>,
}

impl SampleGroup {
    /// Keywords of the group, positive first.
    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.positive.keyword.as_str()).chain(self.negatives.iter().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        1 + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Pairs each query with `negatives` keywords from other pairs of `batch`.
///
/// Candidates are the distinct keywords of the batch other than the
/// positive's own; they are drawn without replacement.
pub fn cross_sample(batch: &[ClickPair], negatives: usize, seed: u64) -> Result<Vec<SampleGroup>> {
    if batch.len() < 2 {
        return Err(Error::invalid("cross sampling needs at least two pairs"));
    }
    if negatives == 0 {
        return Err(Error::invalid("at least one negative per pair is required"));
    }
    let keywords: BTreeSet<&str> = batch.iter().map(|p| p.keyword.as_str()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batch
        .iter()
        .map(|pair| {
            let pool: Vec<&str> = keywords.iter().copied().filter(|k| *k != pair.keyword).collect();
            if pool.len() < negatives {
                return Err(Error::invalid(format!(
                    "batch offers {} distinct keywords besides {:?} but {negatives} negatives were requested",
                    pool.len(),
                    pair.keyword
                )));
            }
            Ok(SampleGroup {
                positive: pair.clone(),
                negatives: pool.choose_multiple(&mut rng, negatives).map(|k| k.to_string()).collect(),
            })
        })
        .collect()
}
