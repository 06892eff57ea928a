//! Per-thread local selection and the global and cross-partition merges.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use super::geometry::ScanGeometry;
use super::index::Partition;
use crate::binvec::{accumulation_scale, RbeEmbedding};
use crate::error::{Error, Result};

/// A scored keyword. `slot` is its position inside the partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub score: f64,
    pub id: u64,
    pub slot: usize,
}

/// Selection order: higher score first, then lower id.
#[inline]
pub fn rank_order(a_score: f64, a_id: u64, b_score: f64, b_id: u64) -> Ordering {
    b_score.total_cmp(&a_score).then(a_id.cmp(&b_id))
}

impl Candidate {
    #[inline]
    fn beats(&self, other: &Candidate) -> bool {
        rank_order(self.score, self.id, other.score, other.id) == Ordering::Less
    }
}

/// Bounded priority list kept by one scan thread, best first.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ThreadQueue {
    entries: Vec<Candidate>,
    /// Keywords this thread scored.
    scanned: u64,
}

impl ThreadQueue {
    fn with_capacity(cap: usize) -> Self {
        Self {
            entries: Vec::with_capacity(cap.min(64)),
            scanned: 0,
        }
    }

    /// Lowest score that can still enter a queue of length `cap`.
    #[inline]
    fn floor(&self, cap: usize) -> f64 {
        if self.entries.len() < cap {
            f64::NEG_INFINITY
        } else {
            self.entries[cap - 1].score
        }
    }

    #[inline]
    fn insert(&mut self, c: Candidate, cap: usize) {
        if self.entries.len() == cap {
            match self.entries.last() {
                Some(worst) if c.beats(worst) => {
                    self.entries.pop();
                }
                _ => return,
            }
        }
        let pos = self.entries.partition_point(|e| e.beats(&c));
        self.entries.insert(pos, c);
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn scanned(&self) -> u64 {
        self.scanned
    }
}

/// One query-plane/keyword-plane product of the weighted score.
#[derive(Debug, Clone, Copy)]
struct PlanePair {
    query: usize,
    keyword: usize,
    shift: u32,
}

/// Query planes plus the kernel configuration for one partition scan.
///
/// The weighted sum `Σ 2^-(j+i)·dot(j, i)` is evaluated as the exact integer
/// `Σ dot(j, i) << (top - j - i)`, which equals the fold of
/// `accumulate_plane_dots` term for term.
struct ScanContext<'a> {
    query: Vec<&'a [u64]>,
    pairs: Vec<PlanePair>,
    words: usize,
    offset: i64,
    /// Reciprocal of the power-of-two accumulation scale, so exact.
    inv_scale: f64,
    partition: &'a Partition,
    geometry: &'a ScanGeometry,
}

impl<'a> ScanContext<'a> {
    fn new(
        query: &'a RbeEmbedding,
        partition: &'a Partition,
        residual_weights: bool,
        geometry: &'a ScanGeometry,
    ) -> Result<Self> {
        let (qp, kp) = (query.plane_count(), partition.plane_blocks().len());
        let top = (qp + kp - 2) as u32;
        let pairs = (0..qp)
            .flat_map(|j| (0..kp).map(move |i| (j, i)))
            .map(|(j, i)| PlanePair {
                query: j,
                keyword: i,
                shift: if residual_weights { top - (j + i) as u32 } else { 0 },
            })
            .collect::<Vec<PlanePair>>();
        let dim = query.dim() as i64;
        let offset = pairs
            .iter()
            .try_fold(0i64, |sum, p| {
                (p.shift < 63)
                    .then(|| dim.checked_mul(1 << p.shift))
                    .flatten()
                    .and_then(|d| sum.checked_add(d))
            })
            .ok_or_else(|| Error::invalid(format!("{qp} query planes and {kp} keyword planes overflow the score")))?;
        Ok(Self {
            offset,
            inv_scale: 1.0 / accumulation_scale(qp, kp, residual_weights),
            query: query.planes().iter().map(|p| p.words()).collect(),
            pairs,
            words: partition.words_per_plane(),
            partition,
            geometry,
        })
    }

    /// Integer scores of the `acc.len()` consecutive slots from `start`.
    ///
    /// Each product is `n - 2·popcount(q ^ k)`, so the sum splits into the
    /// constant `offset = n·Σ 2^shift` minus twice the shifted popcounts.
    /// Every partial sum lies in `[0, offset]`, so wrapping arithmetic is exact.
    #[inline(always)]
    fn accumulate_run(&self, start: usize, acc: &mut [i64]) {
        acc.fill(0);
        let w = self.words;
        let blocks = self.partition.plane_blocks();
        for pair in &self.pairs {
            let q = self.query[pair.query];
            let keys = &blocks[pair.keyword][start * w..(start + acc.len()) * w];
            if w == 1 {
                let q = q[0];
                for (a, k) in acc.iter_mut().zip(keys) {
                    *a = a.wrapping_add(((q ^ k).count_ones() as i64).wrapping_shl(pair.shift));
                }
            } else {
                for (a, k) in acc.iter_mut().zip(keys.chunks_exact(w)) {
                    let differing: u32 = q.iter().zip(k).map(|(x, y)| (x ^ y).count_ones()).sum();
                    *a = a.wrapping_add((differing as i64).wrapping_shl(pair.shift));
                }
            }
        }
        for a in acc.iter_mut() {
            *a = self.offset.wrapping_sub(a.wrapping_mul(2));
        }
    }

    /// Slots `start..start + count` read by the threads of `block` at
    /// lockstep `step`, or `None` past the last step or the partition end.
    #[inline(always)]
    fn step_slots(&self, block: usize, step: u64) -> Option<(usize, usize)> {
        let g = self.geometry;
        let step = step as usize;
        let start = g.start(block, 0) + step * g.threads_per_block;
        let len = self.partition.len();
        if step >= g.items_per_thread || start >= len {
            return None;
        }
        Some((start, g.threads_per_block.min(len - start)))
    }

    /// Scores of the `scores.len()` consecutive slots from `start`.
    #[inline(always)]
    fn score_run(&self, start: usize, acc: &mut [i64], scores: &mut [f64]) {
        self.accumulate_run(start, acc);
        let magnitudes = &self.partition.magnitudes()[start..start + scores.len()];
        for ((s, &a), &m) in scores.iter_mut().zip(&*acc).zip(magnitudes) {
            *s = a as f64 * self.inv_scale / m as f64;
        }
    }

    /// Queues of any length, each kept sorted by insertion. Every thread of
    /// `block` runs in lockstep: at each step threads `0..T_b` read `T_b`
    /// consecutive slots, which are scored together.
    #[inline(always)]
    fn select_queues(&self, block: usize) -> (Vec<ThreadQueue>, u64, usize) {
        let g = self.geometry;
        let ids = self.partition.ids();
        let mut queues: Vec<ThreadQueue> = (0..g.threads_per_block)
            .map(|_| ThreadQueue::with_capacity(g.queue_len))
            .collect();
        let mut floors = vec![f64::NEG_INFINITY; g.threads_per_block];
        let mut acc = vec![0i64; g.threads_per_block];
        let mut scores = vec![0f64; g.threads_per_block];
        let (mut steps, mut last_count) = (0u64, 0usize);
        while let Some((start, count)) = self.step_slots(block, steps) {
            (steps, last_count) = (steps + 1, count);
            self.score_run(start, &mut acc[..count], &mut scores[..count]);
            let lanes = scores[..count].iter().zip(&mut floors).zip(&mut queues).zip(start..start + count);
            for (((&score, floor), queue), slot) in lanes {
                if score >= *floor {
                    queue.insert(Candidate { score, id: ids[slot], slot }, g.queue_len);
                    *floor = queue.floor(g.queue_len);
                }
            }
        }
        (queues, steps, last_count)
    }

    /// Queues of length one, tracked as a best score and slot per thread.
    /// Steps without a tie take the strictly greater score lane by lane;
    /// a step with a tie is settled by id, one lane at a time.
    #[inline(always)]
    fn select_best(&self, block: usize) -> (Vec<ThreadQueue>, u64, usize) {
        let g = self.geometry;
        let ids = self.partition.ids();
        let mut best = vec![f64::NEG_INFINITY; g.threads_per_block];
        let mut best_slot = vec![usize::MAX; g.threads_per_block];
        let mut acc = vec![0i64; g.threads_per_block];
        let mut scores = vec![0f64; g.threads_per_block];
        let (mut steps, mut last_count) = (0u64, 0usize);
        while let Some((start, count)) = self.step_slots(block, steps) {
            (steps, last_count) = (steps + 1, count);
            self.score_run(start, &mut acc[..count], &mut scores[..count]);
            let scores = &scores[..count];
            let tie = scores.iter().zip(&best).fold(false, |tie, (s, b)| tie | (s == b));
            let lanes = scores.iter().zip(&mut best).zip(&mut best_slot).zip(start..start + count);
            if tie {
                for (((&score, b), bs), slot) in lanes {
                    if score > *b || (score == *b && (*bs == usize::MAX || ids[slot] < ids[*bs])) {
                        (*b, *bs) = (score, slot);
                    }
                }
            } else {
                for (((&score, b), bs), slot) in lanes {
                    let take = score > *b;
                    *b = if take { score } else { *b };
                    *bs = if take { slot } else { *bs };
                }
            }
        }
        let queues = best
            .into_iter()
            .zip(best_slot)
            .map(|(score, slot)| {
                let mut queue = ThreadQueue::with_capacity(1);
                if slot != usize::MAX {
                    queue.entries.push(Candidate { score, id: ids[slot], slot });
                }
                queue
            })
            .collect();
        (queues, steps, last_count)
    }

    #[inline(always)]
    fn scan_block_generic(&self, block: usize) -> Vec<ThreadQueue> {
        let (mut queues, steps, last_count) = if self.geometry.queue_len == 1 {
            self.select_best(block)
        } else {
            self.select_queues(block)
        };
        for (thread, queue) in queues.iter_mut().enumerate() {
            queue.scanned = match steps {
                0 => 0,
                s => s - 1 + u64::from(thread < last_count),
            };
        }
        queues
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f,avx512dq,avx512vl,avx512bw,avx512vpopcntdq,popcnt")]
    unsafe fn scan_block_avx512(&self, block: usize) -> Vec<ThreadQueue> {
        self.scan_block_generic(block)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,popcnt")]
    unsafe fn scan_block_avx2(&self, block: usize) -> Vec<ThreadQueue> {
        self.scan_block_generic(block)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "popcnt")]
    unsafe fn scan_block_popcnt(&self, block: usize) -> Vec<ThreadQueue> {
        self.scan_block_generic(block)
    }

    fn scan_block(&self, block: usize) -> Vec<ThreadQueue> {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512vpopcntdq") {
                // SAFETY: the CPU supports avx512f and avx512vpopcntdq.
                return unsafe { self.scan_block_avx512(block) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports avx2 and popcnt.
                return unsafe { self.scan_block_avx2(block) };
            }
            if std::arch::is_x86_feature_detected!("popcnt") {
                // SAFETY: the CPU supports popcnt.
                return unsafe { self.scan_block_popcnt(block) };
            }
        }
        self.scan_block_generic(block)
    }
}

/// Scores every keyword of `partition` once and returns each thread's queue,
/// ordered by thread ordinal `x·T_b + y`.
pub fn local_select(
    query: &RbeEmbedding,
    partition: &Partition,
    dim: usize,
    residual_weights: bool,
    geometry: &ScanGeometry,
) -> Result<Vec<ThreadQueue>> {
    if query.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: query.dim(),
        });
    }
    geometry.ensure_covers(partition.len())?;
    let ctx = ScanContext::new(query, partition, residual_weights, geometry)?;
    let used_blocks = partition
        .len()
        .div_ceil(geometry.threads_per_block * geometry.items_per_thread)
        .min(geometry.blocks);
    let mut queues: Vec<ThreadQueue> = (0..used_blocks)
        .into_par_iter()
        .flat_map_iter(|block| ctx.scan_block(block))
        .collect();
    queues.resize_with(geometry.thread_count(), ThreadQueue::default);
    Ok(queues)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResultEntry {
    pub score: f64,
    pub id: u64,
    pub partition: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SelectionResult {
    pub entries: Vec<ResultEntry>,
    /// Keywords scored to produce this result.
    pub scored: u64,
}

impl SelectionResult {
    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

fn sort_entries(entries: &mut [ResultEntry]) {
    entries.sort_by(|a, b| rank_order(a.score, a.id, b.score, b.id));
}

/// Top `n` of the surviving candidates of one partition.
pub fn global_select(queues: &[ThreadQueue], n: usize, partition: usize) -> SelectionResult {
    let scored = queues.iter().map(ThreadQueue::scanned).sum();
    let mut entries: Vec<ResultEntry> = queues
        .iter()
        .flat_map(|q| q.entries())
        .map(|c| ResultEntry {
            score: c.score,
            id: c.id,
            partition,
        })
        .collect();
    sort_entries(&mut entries);
    entries.truncate(n);
    SelectionResult { entries, scored }
}

/// Merges per-partition results into the overall top `n`.
pub fn merge_results(parts: impl IntoIterator<Item = SelectionResult>, n: usize) -> SelectionResult {
    let mut scored = 0;
    let mut entries = Vec::new();
    for p in parts {
        scored += p.scored;
        entries.extend(p.entries);
    }
    sort_entries(&mut entries);
    entries.truncate(n);
    SelectionResult { entries, scored }
}
