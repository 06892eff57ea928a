//! Flat TOML run configuration shared by every subcommand.
//!
//! Every key is optional. Values given on the command line replace values
//! from the file, and anything still unset falls back to the library
//! defaults. Unknown keys are rejected so typos surface as errors.

use std::path::{Path, PathBuf};

use rbe::bench::{BenchConfig, BenchMode};
use rbe::model::{Estimator, ModelConfig, Side};
use rbe::trainer::TrainConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub pairs: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub output: Option<PathBuf>,

    pub hash_dim: Option<u32>,
    pub feature_dim: Option<usize>,
    pub code_dim: Option<usize>,
    pub query_steps: Option<usize>,
    pub keyword_steps: Option<usize>,
    pub estimator: Option<String>,
    pub residual_weights: Option<bool>,
    pub use_bias: Option<bool>,
    pub full_precision: Option<bool>,
    pub gamma: Option<f64>,
    pub initial_alpha: Option<f64>,
    pub alpha_growth: Option<f64>,

    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub decay_every: Option<usize>,
    pub batch_size: Option<usize>,
    pub negatives: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,

    pub side: Option<String>,
    pub partitions: Option<usize>,
    pub threads_per_block: Option<usize>,
    pub items_per_thread: Option<usize>,
    pub queue_len: Option<usize>,
    pub top_n: Option<usize>,

    pub candidates: Option<u64>,
    pub relevant: Option<u64>,
    pub per_thread: Option<u64>,
    pub max_missed: Option<u64>,
    pub simulate: Option<bool>,
    pub trials: Option<u64>,

    pub corpus_size: Option<usize>,
    pub dim: Option<usize>,
    pub query_planes: Option<usize>,
    pub keyword_planes: Option<usize>,
    pub runs: Option<usize>,
    pub mode: Option<String>,
}

/// Search geometry shape; the block count is sized per index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeometryShape {
    pub threads_per_block: usize,
    pub items_per_thread: usize,
    pub queue_len: usize,
}

/// Parameters of the miss-probability table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeParams {
    pub candidates: u64,
    pub relevant: u64,
    pub per_thread: u64,
    pub max_missed: u64,
    pub simulate: bool,
    pub trials: u64,
    pub queue_len: usize,
    pub seed: u64,
}

impl Settings {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("config: {}", e.to_string().trim_end())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("config file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn model_config(&self) -> CliResult<ModelConfig> {
        let d = ModelConfig::default();
        let estimator = match &self.estimator {
            Some(s) => s
                .parse::<Estimator>()
                .map_err(|e| CliError::usage(format!("estimator: {e}")))?,
            None => d.estimator,
        };
        let cfg = ModelConfig {
            hash_dim: self.hash_dim.unwrap_or(d.hash_dim),
            feature_dim: self.feature_dim.unwrap_or(d.feature_dim),
            code_dim: self.code_dim.unwrap_or(d.code_dim),
            query_steps: self.query_steps.unwrap_or(d.query_steps),
            keyword_steps: self.keyword_steps.unwrap_or(d.keyword_steps),
            estimator,
            residual_weights: self.residual_weights.unwrap_or(d.residual_weights),
            use_bias: self.use_bias.unwrap_or(d.use_bias),
            full_precision: self.full_precision.unwrap_or(d.full_precision),
            gamma: self.gamma.unwrap_or(d.gamma),
            initial_alpha: self.initial_alpha.unwrap_or(d.initial_alpha),
            alpha_growth: self.alpha_growth.unwrap_or(d.alpha_growth),
        };
        cfg.validate().map_err(CliError::usage)?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            model: self.model_config()?,
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            lr_decay: self.lr_decay.unwrap_or(d.lr_decay),
            decay_every: self.decay_every.unwrap_or(d.decay_every),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            negatives: self.negatives.unwrap_or(d.negatives),
            validation_fraction: self.validation_fraction.unwrap_or(d.validation_fraction),
            patience: self.patience.unwrap_or(d.patience),
            seed: self.seed.unwrap_or(d.seed),
        };
        cfg.validate().map_err(CliError::usage)?;
        Ok(cfg)
    }

    pub fn side(&self, default: Side) -> CliResult<Side> {
        match self.side.as_deref() {
            None => Ok(default),
            Some("query") => Ok(Side::Query),
            Some("keyword") => Ok(Side::Keyword),
            Some(other) => Err(CliError::usage(format!("side: expected query or keyword, got '{other}'"))),
        }
    }

    pub fn partitions(&self) -> CliResult<usize> {
        positive("partitions", self.partitions.unwrap_or(1))
    }

    pub fn geometry(&self) -> CliResult<GeometryShape> {
        Ok(GeometryShape {
            threads_per_block: positive("threads_per_block", self.threads_per_block.unwrap_or(256))?,
            items_per_thread: positive("items_per_thread", self.items_per_thread.unwrap_or(256))?,
            queue_len: positive("queue_len", self.queue_len.unwrap_or(1))?,
        })
    }

    pub fn top_n(&self) -> CliResult<usize> {
        positive("top_n", self.top_n.unwrap_or(10))
    }

    pub fn analyze(&self) -> CliResult<AnalyzeParams> {
        let p = AnalyzeParams {
            candidates: self.candidates.unwrap_or(1_000_000_000),
            relevant: self.relevant.unwrap_or(1000),
            per_thread: self.per_thread.unwrap_or(256),
            max_missed: self.max_missed.unwrap_or(2),
            simulate: self.simulate.unwrap_or(false),
            trials: self.trials.unwrap_or(100_000),
            queue_len: self.queue_len.unwrap_or(1),
            seed: self.seed.unwrap_or(0),
        };
        rbe::analysis::MissModel::new(p.candidates, p.relevant, p.per_thread).map_err(CliError::usage)?;
        if p.max_missed > rbe::analysis::MAX_EXACT_MISSES {
            return Err(CliError::usage(format!(
                "max_missed: at most {} is supported",
                rbe::analysis::MAX_EXACT_MISSES
            )));
        }
        if p.simulate {
            positive("queue_len", p.queue_len)?;
            positive("trials", p.trials as usize)?;
        }
        Ok(p)
    }

    pub fn bench(&self) -> CliResult<(BenchConfig, BenchMode)> {
        let d = BenchConfig::default();
        let cfg = BenchConfig {
            keywords: positive("corpus_size", self.corpus_size.unwrap_or(d.keywords))?,
            dim: positive("dim", self.dim.unwrap_or(d.dim))?,
            query_planes: positive("query_planes", self.query_planes.unwrap_or(d.query_planes))?,
            keyword_planes: positive("keyword_planes", self.keyword_planes.unwrap_or(d.keyword_planes))?,
            top_n: positive("top_n", self.top_n.unwrap_or(d.top_n))?,
            threads_per_block: positive("threads_per_block", self.threads_per_block.unwrap_or(d.threads_per_block))?,
            items_per_thread: positive("items_per_thread", self.items_per_thread.unwrap_or(d.items_per_thread))?,
            runs: positive("runs", self.runs.unwrap_or(d.runs))?,
            seed: self.seed.unwrap_or(d.seed),
        };
        let mode = match &self.mode {
            Some(m) => m.parse().map_err(|e| CliError::usage(format!("mode: {e}")))?,
            None => BenchMode::Both,
        };
        Ok((cfg, mode))
    }
}

fn positive(key: &str, value: usize) -> CliResult<usize> {
    if value == 0 {
        return Err(CliError::usage(format!("{key}: must be positive")));
    }
    Ok(value)
}

/// `value` from the settings, failing with a usage error naming `key`.
pub fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("{key}: a path is required (flag --{} or config key {key})", key.replace('_', "-"))))
}

/// Like [`required`], and the file must exist.
pub fn input_file<'a>(value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    let path = required(value, key)?;
    if !path.is_file() {
        return Err(CliError::usage(format!("{key}: file not found: {}", path.display())));
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_file_parses() {
        let s = Settings::parse("feature_dim = 16\ncode_dim = 64\nestimator = \"tanh\"\ngamma = 3.0\ntop_n = 5\n").unwrap();
        let m = s.model_config().unwrap();
        assert_eq!((m.feature_dim, m.code_dim), (16, 64));
        assert_eq!(m.estimator, Estimator::AnnealingTanh);
        assert_eq!(s.top_n().unwrap(), 5);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_usage_errors() {
        let e = Settings::parse("feature_dimm = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("feature_dimm"));
        let e = Settings::parse("gamma = \"high\"\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn invalid_values_name_the_field() {
        let s = Settings {
            gamma: Some(0.0),
            ..Settings::default()
        };
        assert!(s.model_config().unwrap_err().to_string().contains("gamma"));
        let s = Settings {
            per_thread: Some(3),
            candidates: Some(10),
            ..Settings::default()
        };
        assert_eq!(s.analyze().unwrap_err().exit_code(), 2);
        let s = Settings {
            mode: Some("gpu".into()),
            ..Settings::default()
        };
        assert_eq!(s.bench().unwrap_err().exit_code(), 2);
        let s = Settings {
            queue_len: Some(0),
            ..Settings::default()
        };
        assert!(s.geometry().unwrap_err().to_string().contains("queue_len"));
    }

    #[test]
    fn missing_inputs() {
        let e = input_file(&Some(PathBuf::from("/nonexistent/pairs.tsv")), "pairs").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("file not found"));
        assert!(required(&None, "index").is_err());
    }
}
