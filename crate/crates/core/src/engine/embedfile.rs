//! Bulk keyword embeddings file, the input of index builds.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "RBEE" | version u32 | n u32 | planes u32 | flags u8 (1 = residual weights) | count u64
//! count × record: id u64 | planes × ceil(n/64) words u64 | magnitude f32
//! ```

use std::io::{Read, Write};

use crate::binvec::{words_for, PackedBinaryVector, RbeEmbedding};
use crate::error::{Error, Result};
use crate::io_util::{read_f32, read_u32, read_u64, read_u8};

pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"RBEE";
const EMBEDDINGS_VERSION: u32 = 1;
const FLAG_RESIDUAL_WEIGHTS: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub dim: usize,
    pub planes: usize,
    pub residual_weights: bool,
    pub count: u64,
}

pub fn write_embeddings<W: Write>(
    w: &mut W,
    dim: usize,
    planes: usize,
    residual_weights: bool,
    items: &[(u64, RbeEmbedding)],
) -> Result<()> {
    w.write_all(EMBEDDINGS_MAGIC)?;
    w.write_all(&EMBEDDINGS_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(planes as u32).to_le_bytes())?;
    w.write_all(&[if residual_weights { FLAG_RESIDUAL_WEIGHTS } else { 0 }])?;
    w.write_all(&(items.len() as u64).to_le_bytes())?;
    for (id, e) in items {
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
        w.write_all(&id.to_le_bytes())?;
        for p in e.planes() {
            for word in p.words() {
                w.write_all(&word.to_le_bytes())?;
            }
        }
        w.write_all(&(e.magnitude() as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_embeddings<R: Read>(r: &mut R) -> Result<(EmbeddingFileHeader, Vec<(u64, RbeEmbedding)>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != EMBEDDINGS_MAGIC {
        return Err(Error::Format("not an embeddings file (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != EMBEDDINGS_VERSION {
        return Err(Error::Format(format!("unsupported embeddings version {version}")));
    }
    let dim = read_u32(r)? as usize;
    let planes = read_u32(r)? as usize;
    let flags = read_u8(r)?;
    if flags & !FLAG_RESIDUAL_WEIGHTS != 0 {
        return Err(Error::Format(format!("unknown embeddings flags {flags:#x}")));
    }
    let count = read_u64(r)?;
    if dim == 0 || planes == 0 {
        return Err(Error::Format("embedding dimension and plane count must be positive".into()));
    }
    let header = EmbeddingFileHeader {
        dim,
        planes,
        residual_weights: flags & FLAG_RESIDUAL_WEIGHTS != 0,
        count,
    };
    let words = words_for(dim);
    let mut items = Vec::with_capacity(count.min(1 << 24) as usize);
    for _ in 0..count {
        let id = read_u64(r)?;
        let planes = (0..planes)
            .map(|_| {
                let w = (0..words).map(|_| read_u64(r)).collect::<Result<Vec<_>>>()?;
                PackedBinaryVector::from_words(dim, w).map_err(|e| Error::Format(format!("record {id}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let magnitude = read_f32(r)? as f64;
        let e = RbeEmbedding::with_magnitude(planes, magnitude)
            .map_err(|e| Error::Format(format!("record {id}: {e}")))?;
        items.push((id, e));
    }
    Ok((header, items))
}
