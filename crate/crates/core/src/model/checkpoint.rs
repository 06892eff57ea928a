//! Model checkpoint file.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "RBEM" | version u32 | m u32 | n u32 | u u32 | v u32 | hash_dim u32
//! estimator u8 | flags u8 (1 = residual weights, 2 = bias, 4 = full precision)
//! gamma f32 | alpha f32 | alpha_growth f32 | initial_alpha f32
//! query tower, keyword tower
//! ```
//!
//! A tower is `E (hash_dim×m), e (m), W (n×m), b (n)` followed, for each step,
//! by `B (m×n), B-bias (m), R (n×m), R-bias (n)`, every matrix row-major f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Estimator, Matrix, ModelConfig, RbeModel, StepParams, Tower};
use crate::error::{Error, Result};
use crate::io_util::{read_array, read_f32, read_u32, read_u8};

pub const MAGIC: &[u8; 4] = b"RBEM";
pub const VERSION: u32 = 1;

const FLAG_RESIDUAL_WEIGHTS: u8 = 1;
const FLAG_BIAS: u8 = 2;
const FLAG_FULL_PRECISION: u8 = 4;

fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for &v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn write_tower<W: Write>(w: &mut W, tower: &Tower) -> Result<()> {
    write_f32s(w, tower.encoder.as_slice())?;
    write_f32s(w, &tower.encoder_bias)?;
    write_f32s(w, tower.base.as_slice())?;
    write_f32s(w, &tower.base_bias)?;
    for s in &tower.steps {
        write_f32s(w, s.reconstruct.as_slice())?;
        write_f32s(w, &s.reconstruct_bias)?;
        write_f32s(w, s.residual.as_slice())?;
        write_f32s(w, &s.residual_bias)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let raw: Vec<f32> = read_array(r, len, |b| f32::from_le_bytes(b.try_into().unwrap()))?;
    Ok(raw.into_iter().map(f64::from).collect())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Matrix> {
    Ok(Matrix::from_vec(rows, cols, read_f64s(r, rows * cols)?))
}

fn read_tower<R: Read>(r: &mut R, cfg: &ModelConfig, steps: usize) -> Result<Tower> {
    let (h, m, n) = (cfg.hash_dim as usize, cfg.feature_dim, cfg.code_dim);
    Ok(Tower {
        encoder: read_matrix(r, h, m)?,
        encoder_bias: read_f64s(r, m)?,
        base: read_matrix(r, n, m)?,
        base_bias: read_f64s(r, n)?,
        steps: (0..steps)
            .map(|_| {
                Ok(StepParams {
                    reconstruct: read_matrix(r, m, n)?,
                    reconstruct_bias: read_f64s(r, m)?,
                    residual: read_matrix(r, n, m)?,
                    residual_bias: read_f64s(r, n)?,
                })
            })
            .collect::<Result<_>>()?,
    })
}

impl RbeModel {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let c = &self.config;
        w.write_all(MAGIC)?;
        for v in [
            VERSION,
            c.feature_dim as u32,
            c.code_dim as u32,
            c.query_steps as u32,
            c.keyword_steps as u32,
            c.hash_dim,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut flags = 0u8;
        if c.residual_weights {
            flags |= FLAG_RESIDUAL_WEIGHTS;
        }
        if c.use_bias {
            flags |= FLAG_BIAS;
        }
        if c.full_precision {
            flags |= FLAG_FULL_PRECISION;
        }
        w.write_all(&[c.estimator.code(), flags])?;
        for v in [c.gamma, self.alpha, c.alpha_growth, c.initial_alpha] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        write_tower(w, &self.query)?;
        write_tower(w, &self.keyword)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let feature_dim = read_u32(r)? as usize;
        let code_dim = read_u32(r)? as usize;
        let query_steps = read_u32(r)? as usize;
        let keyword_steps = read_u32(r)? as usize;
        let hash_dim = read_u32(r)?;
        let estimator = Estimator::from_code(read_u8(r)?)?;
        let flags = read_u8(r)?;
        let gamma = read_f32(r)? as f64;
        let alpha = read_f32(r)? as f64;
        let alpha_growth = read_f32(r)? as f64;
        let initial_alpha = read_f32(r)? as f64;
        let config = ModelConfig {
            hash_dim,
            feature_dim,
            code_dim,
            query_steps,
            keyword_steps,
            estimator,
            residual_weights: flags & FLAG_RESIDUAL_WEIGHTS != 0,
            use_bias: flags & FLAG_BIAS != 0,
            full_precision: flags & FLAG_FULL_PRECISION != 0,
            gamma,
            initial_alpha,
            alpha_growth,
        };
        config.validate().map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let query = read_tower(r, &config, query_steps)?;
        let keyword = read_tower(r, &config, keyword_steps)?;
        Ok(Self {
            config,
            alpha,
            query,
            keyword,
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

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RbeModel {
        let cfg = ModelConfig {
            hash_dim: 64,
            feature_dim: 6,
            code_dim: 5,
            query_steps: 3,
            keyword_steps: 2,
            ..ModelConfig::default()
        };
        RbeModel::new(cfg, 4).unwrap()
    }

    #[test]
    fn header_announces_plane_counts() {
        let mut buf = Vec::new();
        small().write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        let u = u32::from_le_bytes(buf[16..20].try_into().unwrap());
        let v = u32::from_le_bytes(buf[20..24].try_into().unwrap());
        assert_eq!((u, v), (3, 2));
        let floats = 2 * 64 * 6 + 2 * 6 + 2 * (5 * 6 + 5) + 5 * (2 * 6 * 5 + 6 + 5);
        assert_eq!(buf.len(), 4 + 6 * 4 + 2 + 4 * 4 + floats * 4);
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let model = small();
        let mut first = Vec::new();
        model.write_to(&mut first).unwrap();
        let loaded = RbeModel::read_from(&mut first.as_slice()).unwrap();
        assert_eq!(loaded.config.query_steps, 3);
        assert_eq!(loaded.config.keyword_steps, 2);
        assert_eq!(loaded.config.estimator, model.config.estimator);
        assert_eq!(loaded.config.gamma, 10.0);
        let mut second = Vec::new();
        loaded.write_to(&mut second).unwrap();
        assert_eq!(first, second);
        let e1 = model.encode(super::super::Side::Query, "flowers").unwrap();
        let e2 = loaded.encode(super::super::Side::Query, "flowers").unwrap();
        assert_eq!(e1.planes(), e2.planes());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut buf = Vec::new();
        small().write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(RbeModel::read_from(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(RbeModel::read_from(&mut &short[..]).is_err());
    }
}
