//! Softmax training of the two towers over cross-sampled groups.

pub mod ablation;
mod objective;
mod sampling;
pub mod synth;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use objective::{
    cosine, cosine_grad, evaluate_auc, group_loss, group_loss_grad, group_probability, objective, softmax,
};
pub use sampling::{cross_sample, ClickPair, SampleGroup};

use crate::error::{Error, Result};
use crate::model::{Activation, ForwardTrace, ModelConfig, ModelGradient, RbeModel, Side, SparseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub negatives: usize,
    /// Share of pairs held out for validation. Zero validates on the
    /// training pairs.
    pub validation_fraction: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            epochs: 20,
            learning_rate: 0.05,
            lr_decay: 0.5,
            decay_every: 8,
            batch_size: 32,
            negatives: 10,
            validation_fraction: 0.1,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1]"));
        }
        if self.decay_every == 0 {
            return Err(Error::invalid("decay_every must be positive"));
        }
        if self.negatives == 0 {
            return Err(Error::invalid("negatives must be positive"));
        }
        if self.batch_size <= self.negatives {
            return Err(Error::invalid("batch_size must exceed negatives"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub auc: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: RbeModel,
    /// Epoch 0 is the untrained model.
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

/// Writes one JSON object per epoch.
pub fn write_metrics<W: Write>(w: &mut W, history: &[EpochMetrics]) -> Result<()> {
    for m in history {
        serde_json::to_writer(&mut *w, m).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a `query<TAB>keyword` training file.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<ClickPair>> {
    synth::read_pairs(BufReader::new(File::open(path)?))
}

/// Trigram features of every text, computed once.
struct FeatureCache {
    features: HashMap<String, SparseVector>,
}

impl FeatureCache {
    fn new(model: &RbeModel, pairs: &[ClickPair]) -> Result<Self> {
        let featurizer = model.featurizer();
        let mut features = HashMap::new();
        for p in pairs {
            for text in [&p.query, &p.keyword] {
                if !features.contains_key(text) {
                    features.insert(text.clone(), featurizer.featurize(text)?);
                }
            }
        }
        Ok(Self { features })
    }

    fn get(&self, text: &str) -> &SparseVector {
        &self.features[text]
    }
}

/// Forward traces of the distinct texts of a set of groups.
struct GroupTraces {
    queries: HashMap<String, ForwardTrace>,
    keywords: HashMap<String, ForwardTrace>,
}

impl GroupTraces {
    fn new(model: &RbeModel, cache: &FeatureCache, groups: &[SampleGroup]) -> Result<Self> {
        let mut queries = HashMap::new();
        let mut keywords = HashMap::new();
        for g in groups {
            if !queries.contains_key(&g.positive.query) {
                let t = model.forward(
                    Side::Query,
                    cache.get(&g.positive.query),
                    model.config.query_steps,
                    Activation::Sign,
                )?;
                queries.insert(g.positive.query.clone(), t);
            }
            for k in g.keywords() {
                if !keywords.contains_key(k) {
                    let t = model.forward(Side::Keyword, cache.get(k), model.config.keyword_steps, Activation::Sign)?;
                    keywords.insert(k.to_string(), t);
                }
            }
        }
        Ok(Self { queries, keywords })
    }

    fn similarities(&self, g: &SampleGroup) -> Vec<f64> {
        let q = self.queries[&g.positive.query].refined_vector();
        g.keywords()
            .map(|k| cosine(q, self.keywords[k].refined_vector()))
            .collect()
    }
}

/// Mean log loss and AUC of `model` on `groups`.
pub fn evaluate(model: &RbeModel, groups: &[SampleGroup]) -> Result<(f64, f64)> {
    let mut all: Vec<ClickPair> = groups.iter().map(|g| g.positive.clone()).collect();
    all.extend(
        groups
            .iter()
            .flat_map(|g| g.negatives.iter().map(|k| ClickPair::new(&g.positive.query, k))),
    );
    let cache = FeatureCache::new(model, &all)?;
    evaluate_cached(model, &cache, groups)
}

fn evaluate_cached(model: &RbeModel, cache: &FeatureCache, groups: &[SampleGroup]) -> Result<(f64, f64)> {
    let traces = GroupTraces::new(model, cache, groups)?;
    let mut scored = Vec::new();
    let mut sims = Vec::with_capacity(groups.len());
    for g in groups {
        let s = traces.similarities(g);
        scored.extend(s.iter().enumerate().map(|(i, &v)| (v, i == 0)));
        sims.push((s, 0));
    }
    Ok((objective(&sims, model.config.gamma)?, evaluate_auc(&scored)?))
}

/// Cross-samples `pairs` in consecutive batches. A short final batch is
/// folded into the one before it.
fn batched_groups(pairs: &[ClickPair], batch_size: usize, negatives: usize, seed: u64) -> Result<Vec<Vec<SampleGroup>>> {
    let mut bounds: Vec<(usize, usize)> = (0..pairs.len())
        .step_by(batch_size)
        .map(|s| (s, (s + batch_size).min(pairs.len())))
        .collect();
    if bounds.len() > 1 && bounds.last().is_some_and(|&(s, e)| e - s < batch_size) {
        let (_, end) = bounds.pop().unwrap();
        bounds.last_mut().unwrap().1 = end;
    }
    bounds
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| {
            let batch = &pairs[s..e];
            let distinct = batch
                .iter()
                .map(|p| p.keyword.as_str())
                .collect::<std::collections::HashSet<_>>()
                .len();
            cross_sample(batch, negatives.min(distinct.saturating_sub(1)).max(1), seed.wrapping_add(i as u64))
        })
        .collect()
}

/// One SGD step on a batch of groups; returns the batch's mean loss.
fn sgd_step(model: &mut RbeModel, cache: &FeatureCache, groups: &[SampleGroup], lr: f64) -> Result<f64> {
    let (loss, grad) = batch_gradient(model, cache, groups)?;
    model.apply_gradient(&grad, lr);
    Ok(loss)
}

/// Mean loss of a batch and its gradient with respect to every parameter.
fn batch_gradient(model: &RbeModel, cache: &FeatureCache, groups: &[SampleGroup]) -> Result<(f64, ModelGradient)> {
    let traces = GroupTraces::new(model, cache, groups)?;
    let n = model.config.code_dim;
    let mut up_q: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut up_k: HashMap<&str, Vec<f64>> = HashMap::new();
    let scale = 1.0 / groups.len() as f64;
    let mut total = 0.0;
    for g in groups {
        let q = traces.queries[&g.positive.query].refined_vector();
        let mut sims = Vec::with_capacity(g.len());
        let mut grads = Vec::with_capacity(g.len());
        for k in g.keywords() {
            let (c, gq, gk) = cosine_grad(q, traces.keywords[k].refined_vector());
            sims.push(c);
            grads.push((k, gq, gk));
        }
        let (loss, dl) = group_loss_grad(&sims, 0, model.config.gamma)?;
        total += loss;
        let uq = up_q.entry(g.positive.query.as_str()).or_insert_with(|| vec![0.0; n]);
        for ((k, gq, gk), d) in grads.into_iter().zip(dl) {
            for (u, x) in uq.iter_mut().zip(&gq) {
                *u += scale * d * x;
            }
            let uk = up_k.entry(k).or_insert_with(|| vec![0.0; n]);
            for (u, x) in uk.iter_mut().zip(&gk) {
                *u += scale * d * x;
            }
        }
    }
    let mut grad = model.zero_gradient();
    let mut apply = |side: Side, ups: HashMap<&str, Vec<f64>>, traces: &HashMap<String, ForwardTrace>| {
        let mut keys: Vec<&str> = ups.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            model.backward_into(&traces[k], &ups[k], grad.side_mut(side))?;
        }
        Ok::<(), Error>(())
    };
    apply(Side::Query, up_q, &traces.queries)?;
    apply(Side::Keyword, up_k, &traces.keywords)?;
    Ok((total / groups.len() as f64, grad))
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged {
            epoch,
            detail: format!("non-finite {what}"),
        },
        other => other,
    }
}

/// Trains a fresh model on `pairs`.
pub fn train(pairs: &[ClickPair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = RbeModel::new(cfg.model.clone(), cfg.seed)?;
    train_from(model, pairs, cfg)
}

/// Continues training `model` on `pairs`.
pub fn train_from(mut model: RbeModel, pairs: &[ClickPair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let cache = FeatureCache::new(&model, pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut rng);
    let held_out = (pairs.len() as f64 * cfg.validation_fraction).round() as usize;
    let (valid_pairs, train_pairs) = if held_out == 0 {
        (&shuffled[..], &shuffled[..])
    } else {
        shuffled.split_at(held_out)
    };
    if train_pairs.len() < 2 || valid_pairs.len() < 2 {
        return Err(Error::invalid("need at least two training and two validation pairs"));
    }
    let eval_batch = cfg.batch_size.max(cfg.negatives + 1);
    let valid_groups: Vec<SampleGroup> = batched_groups(valid_pairs, eval_batch, cfg.negatives, cfg.seed ^ 0x7a11d)?
        .into_iter()
        .flatten()
        .collect();
    let train_eval_groups: Vec<SampleGroup> = batched_groups(train_pairs, eval_batch, cfg.negatives, cfg.seed ^ 0x7e57)?
        .into_iter()
        .flatten()
        .collect();

    let record = |model: &RbeModel, epoch: usize, lr: f64| -> Result<EpochMetrics> {
        let (train_loss, _) = evaluate_cached(model, &cache, &train_eval_groups).map_err(|e| diverged(epoch, e))?;
        let (valid_loss, auc) = evaluate_cached(model, &cache, &valid_groups).map_err(|e| diverged(epoch, e))?;
        if !train_loss.is_finite() || !valid_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("train loss {train_loss}, validation loss {valid_loss}"),
            });
        }
        Ok(EpochMetrics {
            epoch,
            train_loss,
            valid_loss,
            auc,
            learning_rate: lr,
        })
    };

    let mut lr = cfg.learning_rate;
    let mut history = vec![record(&model, 0, lr)?];
    let mut best = (history[0].valid_loss, 0, model.clone());
    let mut stale = 0;
    let mut order = train_pairs.to_vec();
    for epoch in 1..=cfg.epochs {
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        epoch_rng.set_stream(epoch as u64);
        order.shuffle(&mut epoch_rng);
        let batches = batched_groups(&order, cfg.batch_size, cfg.negatives, cfg.seed.wrapping_mul(1000).wrapping_add(epoch as u64))?;
        for batch in &batches {
            let loss = sgd_step(&mut model, &cache, batch, lr).map_err(|e| diverged(epoch, e))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch loss {loss}"),
                });
            }
        }
        let metrics = record(&model, epoch, lr)?;
        history.push(metrics);
        if metrics.valid_loss < best.0 {
            best = (metrics.valid_loss, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        model.anneal();
        if epoch % cfg.decay_every == 0 {
            lr *= cfg.lr_decay;
        }
    }
    Ok(TrainOutcome {
        model: best.2,
        history,
        best_epoch: best.1,
    })
}
