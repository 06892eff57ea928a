//! Exhaustive k-NN search over a partitioned keyword index.
//!
//! Each partition is scanned by a grid of logical threads (see
//! [`ScanGeometry`]), each keeping a short priority list. The survivors of a
//! partition are sorted into its top `N`, and the partition results are merged
//! under the same `(score desc, id asc)` key.

mod embedfile;
mod geometry;
mod index;
mod select;

use std::io::Write;

use rayon::prelude::*;

pub use embedfile::{read_embeddings, write_embeddings, EmbeddingFileHeader, EMBEDDINGS_MAGIC};
pub use geometry::ScanGeometry;
pub use index::{KeywordIndex, Partition, INDEX_MAGIC, INDEX_VERSION};
pub use select::{
    global_select, local_select, merge_results, rank_order, Candidate, ResultEntry, SelectionResult, ThreadQueue,
};

use crate::binvec::{rbe_score, RbeEmbedding, SimilarityConfig};
use crate::error::{Error, Result};
use crate::model::{RbeModel, Side};

impl KeywordIndex {
    /// The smallest geometry with the given thread shape that covers every
    /// partition.
    pub fn covering_geometry(
        &self,
        threads_per_block: usize,
        items_per_thread: usize,
        queue_len: usize,
    ) -> Result<ScanGeometry> {
        let largest = self.partitions().iter().map(Partition::len).max().unwrap_or(0);
        ScanGeometry::covering(largest, threads_per_block, items_per_thread, queue_len)
    }
}

fn check_query(query: &RbeEmbedding, index: &KeywordIndex) -> Result<()> {
    if index.is_empty() {
        return Err(Error::Empty("keyword index"));
    }
    if query.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            actual: query.dim(),
        });
    }
    Ok(())
}

/// Top `n` keywords for `query`. Partitions are scanned concurrently.
pub fn search(query: &RbeEmbedding, index: &KeywordIndex, geometry: &ScanGeometry, n: usize) -> Result<SelectionResult> {
    check_query(query, index)?;
    let parts = index
        .partitions()
        .par_iter()
        .enumerate()
        .map(|(ordinal, partition)| {
            let queues = local_select(query, partition, index.dim(), index.residual_weights(), geometry)?;
            Ok(global_select(&queues, n, ordinal))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_results(parts, n))
}

/// Encodes `text` with the query tower and searches for it.
pub fn search_text(
    model: &RbeModel,
    text: &str,
    index: &KeywordIndex,
    geometry: &ScanGeometry,
    n: usize,
) -> Result<SelectionResult> {
    if model.config.residual_weights != index.residual_weights() {
        return Err(Error::invalid("model and index disagree on residual weights"));
    }
    let query = model.encode(Side::Query, text)?;
    search(&query, index, geometry, n)
}

/// Scores every keyword and returns the exact top `n`, for comparison.
pub fn exact_top_n(query: &RbeEmbedding, index: &KeywordIndex, n: usize) -> Result<SelectionResult> {
    check_query(query, index)?;
    let cfg = SimilarityConfig::new(query.plane_count(), index.planes(), index.residual_weights())?.ranking();
    let mut entries = Vec::with_capacity(index.len());
    for (ordinal, partition) in index.partitions().iter().enumerate() {
        for slot in 0..partition.len() {
            let keyword = partition.embedding(slot, index.dim())?;
            entries.push(ResultEntry {
                score: rbe_score(query, &keyword, &cfg)?,
                id: partition.ids()[slot],
                partition: ordinal,
            });
        }
    }
    let scored = entries.len() as u64;
    Ok(merge_results([SelectionResult { entries, scored }], n))
}

/// Fraction of the exact top `n` present in `result`.
pub fn recall_against(result: &SelectionResult, exact: &SelectionResult) -> f64 {
    if exact.entries.is_empty() {
        return 1.0;
    }
    let found: std::collections::HashSet<u64> = result.entries.iter().map(|e| e.id).collect();
    let hits = exact.entries.iter().filter(|e| found.contains(&e.id)).count();
    hits as f64 / exact.entries.len() as f64
}

/// Writes one `rank<TAB>id<TAB>score` line per entry, ranks from 1. Scores
/// use the shortest decimal form that parses back to the same value.
pub fn write_results<W: Write>(w: &mut W, result: &SelectionResult) -> Result<()> {
    for (rank, e) in result.entries.iter().enumerate() {
        writeln!(w, "{}\t{}\t{:?}", rank + 1, e.id, e.score)?;
    }
    Ok(())
}
