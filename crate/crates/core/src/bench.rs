//! Relative scan throughput of the binary engine against a float32 baseline.
//!
//! Both sides scan the same synthetic corpus: float vectors with i.i.d.
//! Gaussian entries, and their binary RBE encodings (base plane `sign(x)`,
//! residual planes taken from what remains after subtracting the running
//! reconstruction). The float scan uses cosine against precomputed inverse
//! norms and keeps its top `N` with a bounded list.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::binvec::{plane_weight, PackedBinaryVector, RbeEmbedding};
use crate::engine::{search, KeywordIndex, ScanGeometry};
use crate::error::{Error, Result};

/// Signs of `x` after subtracting weighted planes, one plane per step.
pub fn binary_planes(x: &[f32], planes: usize, residual_weights: bool) -> Result<Vec<PackedBinaryVector>> {
    let scale = x.iter().map(|v| v.abs() as f64).sum::<f64>() / x.len().max(1) as f64;
    let mut rest: Vec<f64> = x.iter().map(|&v| v as f64 / scale.max(f64::MIN_POSITIVE)).collect();
    let mut out = Vec::with_capacity(planes);
    for t in 0..planes {
        let plane = PackedBinaryVector::from_signs(&rest)?;
        let w = plane_weight(t, residual_weights);
        for (i, r) in rest.iter_mut().enumerate() {
            *r -= w * plane.get(i) as f64;
        }
        out.push(plane);
    }
    Ok(out)
}

/// Float vectors stored row-major with their inverse norms.
#[derive(Debug, Clone)]
pub struct FloatCorpus {
    dim: usize,
    data: Vec<f32>,
    inv_norms: Vec<f32>,
}

impl FloatCorpus {
    pub fn gaussian(count: usize, dim: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Empty("benchmark corpus"));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..count * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let inv_norms = data
            .chunks_exact(dim)
            .map(|v| 1.0 / v.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE))
            .collect();
        Ok(Self { dim, data, inv_norms })
    }

    pub fn len(&self) -> usize {
        self.inv_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_norms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Binary index of the same vectors, ids equal to row numbers.
    pub fn binary_index(&self, keyword_planes: usize, residual_weights: bool) -> Result<KeywordIndex> {
        let items = (0..self.len()).map(|i| {
            let planes = binary_planes(self.vector(i), keyword_planes, residual_weights).expect("finite corpus");
            (i as u64, RbeEmbedding::new(planes, residual_weights).expect("nonzero planes"))
        });
        KeywordIndex::build(items, 1, residual_weights)
    }
}

#[inline(always)]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

#[inline(always)]
fn float_scan_generic(query: &[f32], corpus: &FloatCorpus, n: usize) -> Vec<(f32, u64)> {
    let mut top: Vec<(f32, u64)> = Vec::with_capacity(n + 1);
    let mut threshold = f32::NEG_INFINITY;
    for (i, (v, inv)) in corpus.data.chunks_exact(corpus.dim).zip(&corpus.inv_norms).enumerate() {
        let s = dot_f32(query, v) * inv;
        if top.len() < n || s > threshold {
            let pos = top.partition_point(|&(t, _)| t >= s);
            top.insert(pos, (s, i as u64));
            top.truncate(n);
            if top.len() == n {
                threshold = top[n - 1].0;
            }
        }
    }
    top
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn float_scan_avx2(query: &[f32], corpus: &FloatCorpus, n: usize) -> Vec<(f32, u64)> {
    float_scan_generic(query, corpus, n)
}

/// Exhaustive float32 cosine scan returning the top `n` as (score, row).
pub fn float_scan(query: &[f32], corpus: &FloatCorpus, n: usize) -> Result<Vec<(f32, u64)>> {
    if query.len() != corpus.dim {
        return Err(Error::DimensionMismatch {
            expected: corpus.dim,
            actual: query.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the CPU supports avx2 and fma.
            return Ok(unsafe { float_scan_avx2(query, corpus, n) });
        }
    }
    Ok(float_scan_generic(query, corpus, n))
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub mode: &'static str,
    pub keywords: usize,
    pub runs: usize,
    pub mean_seconds: f64,
    pub stddev_seconds: f64,
    /// Keywords scored per second, from the mean.
    pub throughput: f64,
}

fn time_runs(mode: &'static str, keywords: usize, runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    if runs == 0 {
        return Err(Error::invalid("at least one run is required"));
    }
    let mut secs = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        f()?;
        secs.push(start.elapsed().as_secs_f64());
    }
    let mean = secs.iter().sum::<f64>() / runs as f64;
    let var = secs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (runs.max(2) - 1) as f64;
    Ok(Timing {
        mode,
        keywords,
        runs,
        mean_seconds: mean,
        stddev_seconds: var.sqrt(),
        throughput: keywords as f64 / mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BenchConfig {
    pub keywords: usize,
    pub dim: usize,
    pub query_planes: usize,
    pub keyword_planes: usize,
    pub top_n: usize,
    pub threads_per_block: usize,
    pub items_per_thread: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            keywords: 10_000_000,
            dim: 64,
            query_planes: 3,
            keyword_planes: 2,
            top_n: 1000,
            threads_per_block: 256,
            items_per_thread: 256,
            runs: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub binary: Timing,
    pub float: Timing,
    /// Binary throughput over float throughput.
    pub ratio: f64,
    /// Ratio spread across runs, from the per-run standard deviations.
    pub ratio_stddev: f64,
}

/// Times the binary engine and the float baseline on one shared corpus.
pub fn binary_vs_float(cfg: &BenchConfig) -> Result<BenchReport> {
    let corpus = FloatCorpus::gaussian(cfg.keywords, cfg.dim, cfg.seed)?;
    let index = corpus.binary_index(cfg.keyword_planes, true)?;
    let geometry = index.covering_geometry(cfg.threads_per_block, cfg.items_per_thread, 1)?;
    let mut qrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let query: Vec<f32> = (0..cfg.dim).map(|_| qrng.sample::<f32, _>(StandardNormal)).collect();
    let bquery = RbeEmbedding::new(binary_planes(&query, cfg.query_planes, true)?, true)?;

    let binary = time_runs("binary", cfg.keywords, cfg.runs, || {
        search(&bquery, &index, &geometry, cfg.top_n).map(|_| ())
    })?;
    let float = time_runs("float", cfg.keywords, cfg.runs, || {
        float_scan(&query, &corpus, cfg.top_n).map(|_| ())
    })?;
    let ratio = binary.throughput / float.throughput;
    let rel = (binary.stddev_seconds / binary.mean_seconds).hypot(float.stddev_seconds / float.mean_seconds);
    Ok(BenchReport {
        config: *cfg,
        binary,
        float,
        ratio,
        ratio_stddev: ratio * rel,
    })
}

/// Which scan a benchmark times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Binary,
    Float,
    Both,
}

impl std::str::FromStr for BenchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(BenchMode::Binary),
            "float" => Ok(BenchMode::Float),
            "both" => Ok(BenchMode::Both),
            other => Err(Error::invalid(format!("unknown bench mode '{other}', expected binary, float or both"))),
        }
    }
}

/// Times one scan of the synthetic corpus described by `cfg`.
pub fn time_single(cfg: &BenchConfig, mode: BenchMode) -> Result<Timing> {
    let corpus = FloatCorpus::gaussian(cfg.keywords, cfg.dim, cfg.seed)?;
    let mut qrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let query: Vec<f32> = (0..cfg.dim).map(|_| qrng.sample::<f32, _>(StandardNormal)).collect();
    match mode {
        BenchMode::Binary => {
            let index = corpus.binary_index(cfg.keyword_planes, true)?;
            let geometry = index.covering_geometry(cfg.threads_per_block, cfg.items_per_thread, 1)?;
            let bquery = RbeEmbedding::new(binary_planes(&query, cfg.query_planes, true)?, true)?;
            time_runs("binary", cfg.keywords, cfg.runs, || {
                search(&bquery, &index, &geometry, cfg.top_n).map(|_| ())
            })
        }
        BenchMode::Float => time_runs("float", cfg.keywords, cfg.runs, || {
            float_scan(&query, &corpus, cfg.top_n).map(|_| ())
        }),
        BenchMode::Both => Err(Error::invalid("time_single takes binary or float")),
    }
}

/// Times searches of an existing index with random queries of
/// `query_planes` planes, one fresh query per run.
pub fn time_index(
    index: &KeywordIndex,
    query_planes: usize,
    geometry: &ScanGeometry,
    top_n: usize,
    runs: usize,
    seed: u64,
) -> Result<Timing> {
    if query_planes == 0 {
        return Err(Error::invalid("query planes must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queries = (0..runs.max(1))
        .map(|_| {
            let x: Vec<f32> = (0..index.dim()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            RbeEmbedding::new(binary_planes(&x, query_planes, index.residual_weights())?, index.residual_weights())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut next = queries.iter();
    time_runs("binary", index.len(), runs, || {
        search(next.next().expect("one query per run"), index, geometry, top_n).map(|_| ())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binvec::refined_vector;

    #[test]
    fn float_scan_matches_sort() {
        let corpus = FloatCorpus::gaussian(2000, 24, 1).unwrap();
        let q = corpus.vector(17).to_vec();
        let top = float_scan(&q, &corpus, 10).unwrap();
        assert_eq!(top[0].1, 17);
        let mut all: Vec<(f32, u64)> = (0..corpus.len())
            .map(|i| (dot_f32(&q, corpus.vector(i)) * corpus.inv_norms[i], i as u64))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let ids: Vec<u64> = top.iter().map(|t| t.1).collect();
        let expect: Vec<u64> = all[..10].iter().map(|t| t.1).collect();
        assert_eq!(ids, expect);
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f32> = (0..13).map(|i| i as f32).collect();
        let b = vec![1.0f32; 13];
        assert_eq!(dot_f32(&a, &b), 78.0);
    }

    #[test]
    fn extra_planes_tighten_reconstruction() {
        let corpus = FloatCorpus::gaussian(50, 64, 2).unwrap();
        let cos = |planes: usize| {
            (0..corpus.len())
                .map(|i| {
                    let x = corpus.vector(i);
                    let e = RbeEmbedding::new(binary_planes(x, planes, true).unwrap(), true).unwrap();
                    let r = refined_vector(&e, true);
                    let dot: f64 = x.iter().zip(&r).map(|(a, b)| *a as f64 * b).sum();
                    dot / e.magnitude() / x.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt()
                })
                .sum::<f64>()
        };
        assert!(cos(2) > cos(1));
        assert!(cos(3) > cos(2));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(FloatCorpus::gaussian(0, 64, 0), Err(Error::Empty(_))));
    }

    #[test]
    fn single_modes_and_index_timing() {
        let cfg = BenchConfig {
            keywords: 3000,
            runs: 2,
            top_n: 5,
            ..BenchConfig::default()
        };
        assert_eq!(time_single(&cfg, BenchMode::Binary).unwrap().mode, "binary");
        assert_eq!(time_single(&cfg, BenchMode::Float).unwrap().runs, 2);
        assert!(time_single(&cfg, BenchMode::Both).is_err());
        let index = FloatCorpus::gaussian(3000, 64, 1).unwrap().binary_index(2, true).unwrap();
        let geometry = index.covering_geometry(16, 16, 1).unwrap();
        let t = time_index(&index, 3, &geometry, 10, 3, 0).unwrap();
        assert_eq!((t.keywords, t.runs), (3000, 3));
        assert!(time_index(&index, 0, &geometry, 10, 3, 0).is_err());
        assert_eq!("float".parse::<BenchMode>().unwrap(), BenchMode::Float);
        assert!("gpu".parse::<BenchMode>().is_err());
    }

    #[test]
    fn small_report_is_consistent() {
        let cfg = BenchConfig {
            keywords: 5000,
            runs: 2,
            top_n: 10,
            ..BenchConfig::default()
        };
        let r = binary_vs_float(&cfg).unwrap();
        assert!(r.ratio > 0.0 && r.ratio.is_finite());
        assert_eq!(r.binary.keywords, 5000);
    }
}
