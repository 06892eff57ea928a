use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment of candidates to logical scan threads.
///
/// Thread `y` of block `x` starts at `z = x·T_b·I + y` and visits `I` slots
/// with stride `T_b`, so each block covers a contiguous run of `T_b·I` slots
/// and neighbouring threads read neighbouring keywords.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub blocks: usize,
    pub threads_per_block: usize,
    pub items_per_thread: usize,
    /// Candidates each thread keeps. One is enough when `N ≪ C`.
    pub queue_len: usize,
}

impl ScanGeometry {
    pub fn new(blocks: usize, threads_per_block: usize, items_per_thread: usize, queue_len: usize) -> Result<Self> {
        if blocks == 0 || threads_per_block == 0 || items_per_thread == 0 || queue_len == 0 {
            return Err(Error::invalid(
                "blocks, threads per block, items per thread and queue length must be positive",
            ));
        }
        Ok(Self {
            blocks,
            threads_per_block,
            items_per_thread,
            queue_len,
        })
    }

    /// The smallest grid of `T_b × I` blocks that covers `count` slots.
    pub fn covering(count: usize, threads_per_block: usize, items_per_thread: usize, queue_len: usize) -> Result<Self> {
        let per_block = threads_per_block
            .checked_mul(items_per_thread)
            .filter(|&p| p > 0)
            .ok_or_else(|| Error::invalid("threads per block and items per thread must be positive"))?;
        Self::new(count.div_ceil(per_block).max(1), threads_per_block, items_per_thread, queue_len)
    }

    /// A single thread that scans everything and keeps `queue_len` results.
    pub fn single_thread(count: usize, queue_len: usize) -> Result<Self> {
        Self::new(1, 1, count.max(1), queue_len)
    }

    pub fn capacity(&self) -> usize {
        self.blocks * self.threads_per_block * self.items_per_thread
    }

    pub fn thread_count(&self) -> usize {
        self.blocks * self.threads_per_block
    }

    pub fn ensure_covers(&self, count: usize) -> Result<()> {
        if self.capacity() < count {
            return Err(Error::invalid(format!(
                "geometry covers {} slots but the partition holds {count}",
                self.capacity()
            )));
        }
        Ok(())
    }

    fn check_thread(&self, block: usize, thread: usize) -> Result<()> {
        if block >= self.blocks || thread >= self.threads_per_block {
            return Err(Error::invalid(format!(
                "thread ({block}, {thread}) outside a {}×{} grid",
                self.blocks, self.threads_per_block
            )));
        }
        Ok(())
    }

    /// First slot of thread `(block, thread)`.
    #[inline]
    pub fn start(&self, block: usize, thread: usize) -> usize {
        block * self.threads_per_block * self.items_per_thread + thread
    }

    /// Slots visited by thread `(block, thread)`, restricted to `< count`.
    pub fn thread_assignment(&self, block: usize, thread: usize, count: usize) -> Result<Vec<usize>> {
        self.check_thread(block, thread)?;
        let z = self.start(block, thread);
        Ok((0..self.items_per_thread)
            .map(|i| z + i * self.threads_per_block)
            .take_while(|&s| s < count)
            .collect())
    }

    /// Global ordinal `x·T_b + y` of the thread that visits `slot`.
    #[inline]
    pub fn thread_of(&self, slot: usize) -> usize {
        let per_block = self.threads_per_block * self.items_per_thread;
        let block = slot / per_block;
        block * self.threads_per_block + (slot % per_block) % self.threads_per_block
    }

    /// Items visited by each thread, in ordinal order, for `count` slots.
    pub fn thread_sizes(&self, count: usize) -> Vec<u64> {
        let mut sizes = vec![0u64; self.thread_count()];
        for slot in 0..count.min(self.capacity()) {
            sizes[self.thread_of(slot)] += 1;
        }
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_thread_of_default_grid() {
        let g = ScanGeometry::new(1, 256, 256, 1).unwrap();
        let slots = g.thread_assignment(0, 0, usize::MAX).unwrap();
        assert_eq!(slots.len(), 256);
        assert_eq!(&slots[..3], &[0, 256, 512]);
        assert_eq!(*slots.last().unwrap(), 65280);
    }

    #[test]
    fn hand_evaluated_start() {
        let g = ScanGeometry::new(2, 4, 2, 1).unwrap();
        assert_eq!(g.thread_assignment(1, 3, 16).unwrap(), vec![11, 15]);
    }

    #[test]
    fn exhaustive_coverage() {
        let g = ScanGeometry::new(2, 4, 2, 1).unwrap();
        let mut seen = [0; 16];
        for x in 0..2 {
            for y in 0..4 {
                for s in g.thread_assignment(x, y, 16).unwrap() {
                    seen[s] += 1;
                    assert_eq!(g.thread_of(s), x * 4 + y);
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn ragged_tail_is_filtered() {
        let g = ScanGeometry::covering(13, 4, 2, 1).unwrap();
        assert_eq!(g.blocks, 2);
        let mut all: Vec<usize> = (0..2)
            .flat_map(|x| (0..4).flat_map(move |y| g.thread_assignment(x, y, 13).unwrap()))
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..13).collect::<Vec<_>>());
        assert_eq!(g.thread_sizes(13).iter().sum::<u64>(), 13);
    }

    #[test]
    fn rejects_out_of_range_threads() {
        let g = ScanGeometry::new(2, 4, 2, 1).unwrap();
        assert!(g.thread_assignment(2, 0, 16).is_err());
        assert!(g.thread_assignment(0, 4, 16).is_err());
        assert!(ScanGeometry::new(0, 4, 2, 1).is_err());
        assert!(g.ensure_covers(17).is_err());
    }
}
