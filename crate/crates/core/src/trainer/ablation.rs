//! Seeded comparison of embedding variants on one click log.
//!
//! The last `test_fraction` of the pairs is held out. Every variant is trained
//! on the rest with the same schedule and scored by AUC on fixed test groups
//! cross-sampled from consecutive chunks of the held-out pairs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cross_sample, evaluate, train, ClickPair, SampleGroup, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Base planes only, `u = v = 0`.
    OneBit,
    /// One weighted residual plane per side.
    TwoBit,
    /// One residual plane per side, all planes weighted 1.
    TwoBitUnweighted,
    /// `u = v = 1` with `tanh` in place of the sign.
    FullPrecision,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::OneBit,
        Variant::TwoBit,
        Variant::TwoBitUnweighted,
        Variant::FullPrecision,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::OneBit => "1-bit",
            Variant::TwoBit => "2-bit",
            Variant::TwoBitUnweighted => "2-bit unweighted",
            Variant::FullPrecision => "full precision",
        }
    }

    /// `base` with this variant's steps, weighting and activation.
    pub fn apply(self, base: &TrainConfig, seed: u64) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let steps = if self == Variant::OneBit { 0 } else { 1 };
        cfg.model.query_steps = steps;
        cfg.model.keyword_steps = steps;
        cfg.model.residual_weights = self != Variant::TwoBitUnweighted;
        cfg.model.full_precision = self == Variant::FullPrecision;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub test_fraction: f64,
    /// Pairs per cross-sampling chunk of the test split.
    pub test_batch: usize,
    pub test_seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let mut train = TrainConfig {
            epochs: 30,
            learning_rate: 0.3,
            ..TrainConfig::default()
        };
        train.model.hash_dim = 4096;
        train.model.feature_dim = 16;
        train.model.code_dim = 8;
        train.model.gamma = 3.0;
        Self {
            train,
            seeds: (0..5).collect(),
            test_fraction: 0.1,
            test_batch: 32,
            test_seed: 77,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    /// Test AUC per seed, in seed order.
    pub aucs: Vec<f64>,
    pub test_losses: Vec<f64>,
}

impl VariantResult {
    pub fn mean_auc(&self) -> f64 {
        self.aucs.iter().sum::<f64>() / self.aucs.len() as f64
    }
}

/// Splits off the test pairs and builds their sample groups.
pub fn test_groups(pairs: &[ClickPair], cfg: &AblationConfig) -> Result<(usize, Vec<SampleGroup>)> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction must lie in (0, 1)"));
    }
    let negatives = cfg.train.negatives;
    if cfg.test_batch <= negatives {
        return Err(Error::invalid("test_batch must exceed the negative count"));
    }
    let cut = pairs.len() - (pairs.len() as f64 * cfg.test_fraction).round() as usize;
    let groups: Vec<SampleGroup> = pairs[cut..]
        .chunks(cfg.test_batch)
        .filter(|c| c.len() > negatives)
        .enumerate()
        .map(|(i, c)| cross_sample(c, negatives, cfg.test_seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if groups.is_empty() {
        return Err(Error::Empty("test groups"));
    }
    Ok((cut, groups))
}

/// Trains every variant under every seed. Runs are independent and execute in
/// parallel; results do not depend on scheduling.
pub fn run_ablation(pairs: &[ClickPair], variants: &[Variant], cfg: &AblationConfig) -> Result<Vec<VariantResult>> {
    if cfg.seeds.is_empty() {
        return Err(Error::Empty("ablation seeds"));
    }
    cfg.train.validate()?;
    let (cut, groups) = test_groups(pairs, cfg)?;
    let train_pairs = &pairs[..cut];
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let out = train(train_pairs, &variant.apply(&cfg.train, seed))?;
            evaluate(&out.model, &groups)
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    Ok(variants
        .iter()
        .zip(scores.chunks(cfg.seeds.len()))
        .map(|(&variant, chunk)| VariantResult {
            variant,
            aucs: chunk.iter().map(|s| s.1).collect(),
            test_losses: chunk.iter().map(|s| s.0).collect(),
        })
        .collect())
}
