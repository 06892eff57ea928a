//! Little-endian primitives shared by the binary file formats.

use std::io::Read;

use crate::error::Result;

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Reads `len` fixed-width values of `size_of::<T>()` bytes each.
pub(crate) fn read_array<R: Read, T>(r: &mut R, len: usize, decode: impl Fn(&[u8]) -> T) -> Result<Vec<T>> {
    let width = std::mem::size_of::<T>();
    let mut out = Vec::with_capacity(len);
    let mut buf = vec![0u8; width * 4096];
    let mut left = len;
    while left > 0 {
        let take = left.min(4096);
        let chunk = &mut buf[..take * width];
        r.read_exact(chunk)?;
        out.extend(chunk.chunks_exact(width).map(&decode));
        left -= take;
    }
    Ok(out)
}
