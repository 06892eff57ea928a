//! Plane-separated keyword store.
//!
//! Within a partition all base planes sit in one contiguous block, followed by
//! the block of first residual planes, and so on. Keyword `z` of plane `p`
//! occupies words `[z·w, (z+1)·w)` of `plane_blocks[p]`, `w = ceil(n/64)`.
//!
//! File layout, all little-endian:
//!
//! ```text
//! "RBEI" | version u32 | n u32 | planes u32 | residual_weights u8
//! partition_count u32 | K_p u64 × partition_count
//! per partition: plane blocks (u64 words, plane order) | magnitudes f32 × K_p | ids u64 × K_p
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binvec::{words_for, PackedBinaryVector, RbeEmbedding, WORD_BITS};
use crate::error::{Error, Result};
use crate::io_util::{read_array, read_u32, read_u64, read_u8};

pub const INDEX_MAGIC: &[u8; 4] = b"RBEI";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    len: usize,
    words: usize,
    plane_blocks: Vec<Vec<u64>>,
    magnitudes: Vec<f32>,
    ids: Vec<u64>,
}

impl Partition {
    fn empty(planes: usize, words: usize) -> Self {
        Self {
            len: 0,
            words,
            plane_blocks: vec![Vec::new(); planes],
            magnitudes: Vec::new(),
            ids: Vec::new(),
        }
    }

    fn push(&mut self, id: u64, e: &RbeEmbedding) {
        for (block, plane) in self.plane_blocks.iter_mut().zip(e.planes()) {
            block.extend_from_slice(plane.words());
        }
        self.magnitudes.push(e.magnitude() as f32);
        self.ids.push(id);
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words_per_plane(&self) -> usize {
        self.words
    }

    pub fn plane_block(&self, plane: usize) -> &[u64] {
        &self.plane_blocks[plane]
    }

    pub fn plane_blocks(&self) -> &[Vec<u64>] {
        &self.plane_blocks
    }

    pub fn magnitudes(&self) -> &[f32] {
        &self.magnitudes
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    #[inline]
    pub fn keyword_plane(&self, plane: usize, slot: usize) -> &[u64] {
        &self.plane_blocks[plane][slot * self.words..(slot + 1) * self.words]
    }

    /// Reassembles the stored embedding of `slot`.
    pub fn embedding(&self, slot: usize, dim: usize) -> Result<RbeEmbedding> {
        let planes = (0..self.plane_blocks.len())
            .map(|p| PackedBinaryVector::from_words(dim, self.keyword_plane(p, slot).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        RbeEmbedding::with_magnitude(planes, self.magnitudes[slot] as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordIndex {
    dim: usize,
    planes: usize,
    residual_weights: bool,
    partitions: Vec<Partition>,
}

impl KeywordIndex {
    /// Distributes keywords round-robin over `partition_count` partitions,
    /// preserving arrival order within each.
    pub fn build<I>(embeddings: I, partition_count: usize, residual_weights: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, RbeEmbedding)>,
    {
        if partition_count == 0 {
            return Err(Error::invalid("partition count must be positive"));
        }
        let mut iter = embeddings.into_iter().peekable();
        let (dim, planes) = match iter.peek() {
            Some((_, e)) => (e.dim(), e.plane_count()),
            None => return Err(Error::Empty("keyword embeddings")),
        };
        let words = words_for(dim);
        let mut partitions = vec![Partition::empty(planes, words); partition_count];
        let mut seen = HashSet::new();
        for (i, (id, e)) in iter.enumerate() {
            if e.plane_count() != planes {
                return Err(Error::PlaneMismatch {
                    expected: planes,
                    actual: e.plane_count(),
                });
            }
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: e.dim(),
                });
            }
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
            partitions[i % partition_count].push(id, &e);
        }
        Ok(Self {
            dim,
            planes,
            residual_weights,
            partitions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn residual_weights(&self) -> bool {
        self.residual_weights
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn len(&self) -> usize {
        self.partitions.iter().map(Partition::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Plane bytes stored per keyword: `planes · ceil(n/64) · 8`.
    pub fn plane_bytes_per_keyword(&self) -> usize {
        self.planes * words_for(self.dim) * 8
    }

    /// Total bytes held in plane blocks.
    pub fn plane_payload_bytes(&self) -> usize {
        self.partitions
            .iter()
            .flat_map(|p| &p.plane_blocks)
            .map(|b| b.len() * 8)
            .sum()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.planes as u32).to_le_bytes())?;
        w.write_all(&[self.residual_weights as u8])?;
        w.write_all(&(self.partitions.len() as u32).to_le_bytes())?;
        for p in &self.partitions {
            w.write_all(&(p.len as u64).to_le_bytes())?;
        }
        for p in &self.partitions {
            for block in &p.plane_blocks {
                for word in block {
                    w.write_all(&word.to_le_bytes())?;
                }
            }
            for m in &p.magnitudes {
                w.write_all(&m.to_le_bytes())?;
            }
            for id in &p.ids {
                w.write_all(&id.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::Format("not a keyword index (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != INDEX_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let dim = read_u32(r)? as usize;
        let planes = read_u32(r)? as usize;
        let residual_weights = match read_u8(r)? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad residual weight flag {other}"))),
        };
        if dim == 0 || planes == 0 {
            return Err(Error::Format("index dimension and plane count must be positive".into()));
        }
        let partition_count = read_u32(r)? as usize;
        let lens = (0..partition_count)
            .map(|_| read_u64(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let words = words_for(dim);
        let pad_mask = match dim % WORD_BITS {
            0 => 0,
            rem => !((1u64 << rem) - 1),
        };
        let mut seen = HashSet::new();
        let mut partitions = Vec::with_capacity(partition_count);
        for len in lens {
            let mut plane_blocks = Vec::with_capacity(planes);
            for _ in 0..planes {
                let block = read_array(r, len * words, |b| u64::from_le_bytes(b.try_into().unwrap()))?;
                if pad_mask != 0 && block.chunks_exact(words).any(|k| k[words - 1] & pad_mask != 0) {
                    return Err(Error::Format("padding bits set in plane block".into()));
                }
                plane_blocks.push(block);
            }
            let magnitudes = read_array(r, len, |b| f32::from_le_bytes(b.try_into().unwrap()))?;
            if magnitudes.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                return Err(Error::Format("keyword magnitudes must be finite and positive".into()));
            }
            let ids = read_array(r, len, |b| u64::from_le_bytes(b.try_into().unwrap()))?;
            for &id in &ids {
                if !seen.insert(id) {
                    return Err(Error::DuplicateId(id));
                }
            }
            partitions.push(Partition {
                len,
                words,
                plane_blocks,
                magnitudes,
                ids,
            });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after index".into()));
        }
        Ok(Self {
            dim,
            planes,
            residual_weights,
            partitions,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
