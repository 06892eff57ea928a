//! The two-tower RBE network.
//!
//! Each side maps hashed trigram counts to a dense feature vector
//! `f = tanh(E·x + e)` and then runs the binarization recurrence:
//!
//! ```text
//! b⁰   = ρ(W·f)
//! fᵗ⁻¹ = tanh(Bᵗ⁻¹·bᵗ⁻¹)
//! dᵗ⁻¹ = ρ(Rᵗ⁻¹·(f − fᵗ⁻¹))
//! bᵗ   = bᵗ⁻¹ + 2⁻ᵗ·dᵗ⁻¹
//! ```
//!
//! `Bᵗ` and `Rᵗ` are separate for every step. Query and keyword towers share
//! nothing.

pub mod checkpoint;
pub mod featurize;
mod matrix;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use featurize::{Featurizer, SparseVector, DEFAULT_HASH_DIM};
pub use matrix::Matrix;

use crate::binvec::{plane_weight, PackedBinaryVector, RbeEmbedding};
use crate::error::{Error, Result};
use matrix::axpy;

/// Gradient estimator for the sign function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Identity gradient.
    StraightThrough,
    /// Identity gradient clipped to `|x| <= 1`.
    StraightThroughVariant,
    /// Gradient of `tanh(αx)`.
    AnnealingTanh,
}

impl Estimator {
    pub fn code(self) -> u8 {
        match self {
            Estimator::StraightThrough => 0,
            Estimator::StraightThroughVariant => 1,
            Estimator::AnnealingTanh => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Estimator::StraightThrough),
            1 => Ok(Estimator::StraightThroughVariant),
            2 => Ok(Estimator::AnnealingTanh),
            other => Err(Error::invalid(format!("unknown estimator code {other}"))),
        }
    }

    /// Smooth stand-in for the sign function whose derivative is this
    /// estimator's gradient.
    pub fn surrogate(self, x: f64, alpha: f64) -> f64 {
        match self {
            Estimator::StraightThrough => x,
            Estimator::StraightThroughVariant => x.clamp(-1.0, 1.0),
            Estimator::AnnealingTanh => (alpha * x).tanh(),
        }
    }

    fn derivative(self, x: f64, alpha: f64) -> f64 {
        match self {
            Estimator::StraightThrough => 1.0,
            Estimator::StraightThroughVariant => {
                if x.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Estimator::AnnealingTanh => {
                let t = (alpha * x).tanh();
                alpha * (1.0 - t * t)
            }
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::StraightThrough => "straight_through",
            Estimator::StraightThroughVariant => "straight_through_variant",
            Estimator::AnnealingTanh => "annealing_tanh",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight_through" | "st" => Ok(Estimator::StraightThrough),
            "straight_through_variant" | "st_variant" => Ok(Estimator::StraightThroughVariant),
            "annealing_tanh" | "tanh" => Ok(Estimator::AnnealingTanh),
            other => Err(Error::invalid(format!("unknown estimator '{other}'"))),
        }
    }
}

/// `ρ(x)`: -1 for `x <= 0`, +1 otherwise.
pub fn binarize(x: f64) -> Result<i8> {
    if !x.is_finite() {
        return Err(Error::NonFinite("binarize input"));
    }
    Ok(if x <= 0.0 { -1 } else { 1 })
}

/// Backward pass of `ρ` under an estimator.
pub fn binarize_grad(x: f64, upstream: f64, estimator: Estimator, alpha: f64) -> Result<f64> {
    if !x.is_finite() || !upstream.is_finite() {
        return Err(Error::NonFinite("binarize gradient input"));
    }
    if estimator == Estimator::AnnealingTanh && !(alpha >= 1.0) {
        return Err(Error::invalid(format!("annealing slope must be >= 1, got {alpha}")));
    }
    Ok(upstream * estimator.derivative(x, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Keyword,
}

/// How the forward pass realizes `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// True sign; used for training and inference.
    Sign,
    /// The estimator's smooth surrogate; its exact gradient is what
    /// `backward` computes.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hash_dim: u32,
    /// `m`
    pub feature_dim: usize,
    /// `n`
    pub code_dim: usize,
    /// `u`
    pub query_steps: usize,
    /// `v`
    pub keyword_steps: usize,
    pub estimator: Estimator,
    pub residual_weights: bool,
    pub use_bias: bool,
    /// Replace `ρ` with `tanh` everywhere: the float upper-bound ablation.
    pub full_precision: bool,
    pub gamma: f64,
    pub initial_alpha: f64,
    /// Multiplier applied to the annealing slope after every epoch.
    pub alpha_growth: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hash_dim: DEFAULT_HASH_DIM,
            feature_dim: 288,
            code_dim: 64,
            query_steps: 2,
            keyword_steps: 1,
            estimator: Estimator::StraightThroughVariant,
            residual_weights: true,
            use_bias: true,
            full_precision: false,
            gamma: 10.0,
            initial_alpha: 1.0,
            alpha_growth: 1.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hash_dim == 0 || self.feature_dim == 0 || self.code_dim == 0 {
            return Err(Error::invalid("hash_dim, feature_dim and code_dim must be positive"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.initial_alpha >= 1.0) {
            return Err(Error::invalid("initial annealing slope must be >= 1"));
        }
        if !(self.alpha_growth >= 1.0) {
            return Err(Error::invalid("annealing growth must be >= 1"));
        }
        if self.query_steps > 62 || self.keyword_steps > 62 {
            return Err(Error::invalid("at most 62 residual steps per side"));
        }
        Ok(())
    }

    pub fn steps(&self, side: Side) -> usize {
        match side {
            Side::Query => self.query_steps,
            Side::Keyword => self.keyword_steps,
        }
    }
}

/// Parameters of one refinement step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepParams {
    /// `Bᵗ`, m × n
    pub reconstruct: Matrix,
    pub reconstruct_bias: Vec<f64>,
    /// `Rᵗ`, n × m
    pub residual: Matrix,
    pub residual_bias: Vec<f64>,
}

/// One side of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    /// hash_dim × m; row `i` is the contribution of trigram bucket `i`.
    pub encoder: Matrix,
    pub encoder_bias: Vec<f64>,
    /// `W`, n × m
    pub base: Matrix,
    pub base_bias: Vec<f64>,
    pub steps: Vec<StepParams>,
}

impl Tower {
    fn init(cfg: &ModelConfig, steps: usize, rng: &mut ChaCha8Rng) -> Self {
        let (h, m, n) = (cfg.hash_dim as usize, cfg.feature_dim, cfg.code_dim);
        Self {
            encoder: Matrix::glorot(h, m, rng),
            encoder_bias: vec![0.0; m],
            base: Matrix::glorot(n, m, rng),
            base_bias: vec![0.0; n],
            steps: (0..steps)
                .map(|_| StepParams {
                    reconstruct: Matrix::glorot(m, n, rng),
                    reconstruct_bias: vec![0.0; m],
                    residual: Matrix::glorot(n, m, rng),
                    residual_bias: vec![0.0; n],
                })
                .collect(),
        }
    }

    fn zeros_like(cfg: &ModelConfig, steps: usize) -> Self {
        let (h, m, n) = (cfg.hash_dim as usize, cfg.feature_dim, cfg.code_dim);
        Self {
            encoder: Matrix::zeros(h, m),
            encoder_bias: vec![0.0; m],
            base: Matrix::zeros(n, m),
            base_bias: vec![0.0; n],
            steps: (0..steps)
                .map(|_| StepParams {
                    reconstruct: Matrix::zeros(m, n),
                    reconstruct_bias: vec![0.0; m],
                    residual: Matrix::zeros(n, m),
                    residual_bias: vec![0.0; n],
                })
                .collect(),
        }
    }

    /// `f = tanh(E·x + e)`
    pub fn encode(&self, features: &SparseVector) -> Result<Vec<f64>> {
        let mut pre = self.encoder_bias.clone();
        for &(idx, count) in features.entries() {
            if idx as usize >= self.encoder.rows() {
                return Err(Error::DimensionMismatch {
                    expected: self.encoder.rows(),
                    actual: idx as usize + 1,
                });
            }
            axpy(&mut pre, count, self.encoder.row(idx as usize));
        }
        Ok(pre.into_iter().map(f64::tanh).collect())
    }
}

/// Per-step intermediates of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    /// `fᵗ⁻¹`
    pub reconstructed: Vec<f64>,
    /// `Rᵗ⁻¹·(f − fᵗ⁻¹) + c`
    pub residual_pre: Vec<f64>,
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub side: Side,
    pub activation: Activation,
    pub features: Option<SparseVector>,
    /// `f`
    pub encoded: Vec<f64>,
    /// `W·f + b`
    pub base_pre: Vec<f64>,
    pub steps: Vec<StepTrace>,
    /// `b⁰, d⁰, d¹, …` as emitted by the activation.
    pub outputs: Vec<Vec<f64>>,
    /// `b⁰, b¹, …, bᵗ`
    pub refined: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// The final refined vector `bᵗ`.
    pub fn refined_vector(&self) -> &[f64] {
        self.refined.last().expect("trace has a base step")
    }

    /// The ingredient planes packed for search. Only valid for sign traces.
    pub fn embedding(&self, residual_weights: bool) -> Result<RbeEmbedding> {
        if self.activation != Activation::Sign {
            return Err(Error::invalid("only sign traces produce binary embeddings"));
        }
        let planes = self
            .outputs
            .iter()
            .map(|o| PackedBinaryVector::from_signs(o))
            .collect::<Result<Vec<_>>>()?;
        RbeEmbedding::new(planes, residual_weights)
    }
}

/// Gradient of one tower. Encoder rows are stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerGradient {
    pub encoder_rows: BTreeMap<u32, Vec<f64>>,
    pub encoder_bias: Vec<f64>,
    pub base: Matrix,
    pub base_bias: Vec<f64>,
    pub steps: Vec<StepParams>,
}

impl TowerGradient {
    pub fn zeros(cfg: &ModelConfig, steps: usize) -> Self {
        let t = Tower::zeros_like(&ModelConfig { hash_dim: 0, ..cfg.clone() }, steps);
        Self {
            encoder_rows: BTreeMap::new(),
            encoder_bias: t.encoder_bias,
            base: t.base,
            base_bias: t.base_bias,
            steps: t.steps,
        }
    }

    pub fn is_zero(&self) -> bool {
        let zero = |v: &[f64]| v.iter().all(|&x| x == 0.0);
        self.encoder_rows.values().all(|r| zero(r))
            && zero(&self.encoder_bias)
            && zero(self.base.as_slice())
            && zero(&self.base_bias)
            && self.steps.iter().all(|s| {
                zero(s.reconstruct.as_slice())
                    && zero(&s.reconstruct_bias)
                    && zero(s.residual.as_slice())
                    && zero(&s.residual_bias)
            })
    }

    pub fn squared_norm(&self) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        self.encoder_rows.values().map(|r| sq(r)).sum::<f64>()
            + sq(&self.encoder_bias)
            + sq(self.base.as_slice())
            + sq(&self.base_bias)
            + self
                .steps
                .iter()
                .map(|s| {
                    sq(s.reconstruct.as_slice())
                        + sq(&s.reconstruct_bias)
                        + sq(s.residual.as_slice())
                        + sq(&s.residual_bias)
                })
                .sum::<f64>()
    }
}

/// Gradients for both towers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub query: TowerGradient,
    pub keyword: TowerGradient,
}

impl ModelGradient {
    pub fn side_mut(&mut self, side: Side) -> &mut TowerGradient {
        match side {
            Side::Query => &mut self.query,
            Side::Keyword => &mut self.keyword,
        }
    }
}

/// All learnable state plus the configuration it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct RbeModel {
    pub config: ModelConfig,
    /// Current annealing slope.
    pub alpha: f64,
    pub query: Tower,
    pub keyword: Tower,
}

impl RbeModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let query = Tower::init(&config, config.query_steps, &mut rng);
        rng.set_stream(2);
        let keyword = Tower::init(&config, config.keyword_steps, &mut rng);
        Ok(Self {
            alpha: config.initial_alpha,
            config,
            query,
            keyword,
        })
    }

    pub fn featurizer(&self) -> Featurizer {
        Featurizer::new(self.config.hash_dim).expect("validated hash_dim")
    }

    pub fn tower(&self, side: Side) -> &Tower {
        match side {
            Side::Query => &self.query,
            Side::Keyword => &self.keyword,
        }
    }

    pub fn tower_mut(&mut self, side: Side) -> &mut Tower {
        match side {
            Side::Query => &mut self.query,
            Side::Keyword => &mut self.keyword,
        }
    }

    pub fn zero_gradient(&self) -> ModelGradient {
        ModelGradient {
            query: TowerGradient::zeros(&self.config, self.config.query_steps),
            keyword: TowerGradient::zeros(&self.config, self.config.keyword_steps),
        }
    }

    #[inline]
    fn activate(&self, x: f64, activation: Activation) -> f64 {
        if self.config.full_precision {
            return x.tanh();
        }
        match activation {
            Activation::Sign => {
                if x <= 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            Activation::Surrogate => self.config.estimator.surrogate(x, self.alpha),
        }
    }

    #[inline]
    fn activation_grad(&self, x: f64) -> f64 {
        if self.config.full_precision {
            let t = x.tanh();
            return 1.0 - t * t;
        }
        self.config.estimator.derivative(x, self.alpha)
    }

    /// Runs `steps` refinement steps from trigram features.
    pub fn forward(
        &self,
        side: Side,
        features: &SparseVector,
        steps: usize,
        activation: Activation,
    ) -> Result<ForwardTrace> {
        let encoded = self.tower(side).encode(features)?;
        let mut trace = self.forward_dense(side, &encoded, steps, activation)?;
        trace.features = Some(features.clone());
        Ok(trace)
    }

    /// Runs the recurrence from an already-encoded feature vector `f`.
    pub fn forward_dense(
        &self,
        side: Side,
        encoded: &[f64],
        steps: usize,
        activation: Activation,
    ) -> Result<ForwardTrace> {
        let tower = self.tower(side);
        if steps > tower.steps.len() {
            return Err(Error::invalid(format!(
                "requested {steps} steps but the {side:?} tower has {}",
                tower.steps.len()
            )));
        }
        if encoded.len() != self.config.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.feature_dim,
                actual: encoded.len(),
            });
        }
        if encoded.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("encoded features"));
        }
        let mut base_pre = tower.base.matvec(encoded);
        axpy(&mut base_pre, 1.0, &tower.base_bias);
        let base: Vec<f64> = base_pre.iter().map(|&x| self.activate(x, activation)).collect();

        let mut outputs = vec![base.clone()];
        let mut refined = vec![base];
        let mut step_traces = Vec::with_capacity(steps);
        for (t, sp) in tower.steps.iter().take(steps).enumerate() {
            let prev = &refined[t];
            let mut recon_pre = sp.reconstruct.matvec(prev);
            axpy(&mut recon_pre, 1.0, &sp.reconstruct_bias);
            let reconstructed: Vec<f64> = recon_pre.into_iter().map(f64::tanh).collect();
            let gap: Vec<f64> = encoded.iter().zip(&reconstructed).map(|(f, h)| f - h).collect();
            let mut residual_pre = sp.residual.matvec(&gap);
            axpy(&mut residual_pre, 1.0, &sp.residual_bias);
            let out: Vec<f64> = residual_pre.iter().map(|&x| self.activate(x, activation)).collect();
            let w = plane_weight(t + 1, self.config.residual_weights);
            let next: Vec<f64> = prev.iter().zip(&out).map(|(b, d)| b + w * d).collect();
            outputs.push(out);
            refined.push(next);
            step_traces.push(StepTrace {
                reconstructed,
                residual_pre,
            });
        }
        Ok(ForwardTrace {
            side,
            activation,
            features: None,
            encoded: encoded.to_vec(),
            base_pre,
            steps: step_traces,
            outputs,
            refined,
        })
    }

    /// Accumulates into `grad` the gradient of a loss whose derivative with
    /// respect to the final refined vector is `upstream`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        grad: &mut TowerGradient,
    ) -> Result<()> {
        let tower = self.tower(trace.side);
        let n = self.config.code_dim;
        if upstream.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: upstream.len(),
            });
        }
        if trace.steps.len() > tower.steps.len()
            || grad.steps.len() < trace.steps.len()
            || trace.encoded.len() != self.config.feature_dim
            || trace.base_pre.len() != n
        {
            return Err(Error::invalid("trace does not match model parameters"));
        }
        if upstream.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("upstream gradient"));
        }

        let f = &trace.encoded;
        let mut g_refined = upstream.to_vec();
        let mut g_f = vec![0.0; f.len()];

        for t in (0..trace.steps.len()).rev() {
            let st = &trace.steps[t];
            let sp = &tower.steps[t];
            let gs = &mut grad.steps[t];
            let w = plane_weight(t + 1, self.config.residual_weights);
            let g_pre: Vec<f64> = g_refined
                .iter()
                .zip(&st.residual_pre)
                .map(|(g, &a)| w * g * self.activation_grad(a))
                .collect();
            let gap: Vec<f64> = f.iter().zip(&st.reconstructed).map(|(f, h)| f - h).collect();
            gs.residual.add_outer(&g_pre, &gap);
            axpy(&mut gs.residual_bias, 1.0, &g_pre);
            let g_gap = sp.residual.matvec_t(&g_pre);
            axpy(&mut g_f, 1.0, &g_gap);
            let g_recon_pre: Vec<f64> = g_gap
                .iter()
                .zip(&st.reconstructed)
                .map(|(g, h)| -g * (1.0 - h * h))
                .collect();
            gs.reconstruct.add_outer(&g_recon_pre, &trace.refined[t]);
            axpy(&mut gs.reconstruct_bias, 1.0, &g_recon_pre);
            let back = sp.reconstruct.matvec_t(&g_recon_pre);
            axpy(&mut g_refined, 1.0, &back);
        }

        let g_base_pre: Vec<f64> = g_refined
            .iter()
            .zip(&trace.base_pre)
            .map(|(g, &a)| g * self.activation_grad(a))
            .collect();
        grad.base.add_outer(&g_base_pre, f);
        axpy(&mut grad.base_bias, 1.0, &g_base_pre);
        axpy(&mut g_f, 1.0, &tower.base.matvec_t(&g_base_pre));

        if let Some(features) = &trace.features {
            let g_enc_pre: Vec<f64> = g_f.iter().zip(f).map(|(g, y)| g * (1.0 - y * y)).collect();
            axpy(&mut grad.encoder_bias, 1.0, &g_enc_pre);
            for &(idx, count) in features.entries() {
                let row = grad
                    .encoder_rows
                    .entry(idx)
                    .or_insert_with(|| vec![0.0; f.len()]);
                axpy(row, count, &g_enc_pre);
            }
        }
        Ok(())
    }

    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<TowerGradient> {
        let mut grad = TowerGradient::zeros(&self.config, trace.steps.len());
        self.backward_into(trace, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Plain SGD step: `θ -= lr · g`. Biases are frozen when disabled.
    pub fn apply_gradient(&mut self, grad: &ModelGradient, learning_rate: f64) {
        let use_bias = self.config.use_bias;
        for (side, g) in [(Side::Query, &grad.query), (Side::Keyword, &grad.keyword)] {
            let tower = self.tower_mut(side);
            for (&idx, row) in &g.encoder_rows {
                axpy(tower.encoder.row_mut(idx as usize), -learning_rate, row);
            }
            tower.base.axpy(-learning_rate, &g.base);
            if use_bias {
                axpy(&mut tower.encoder_bias, -learning_rate, &g.encoder_bias);
                axpy(&mut tower.base_bias, -learning_rate, &g.base_bias);
            }
            for (sp, gs) in tower.steps.iter_mut().zip(&g.steps) {
                sp.reconstruct.axpy(-learning_rate, &gs.reconstruct);
                sp.residual.axpy(-learning_rate, &gs.residual);
                if use_bias {
                    axpy(&mut sp.reconstruct_bias, -learning_rate, &gs.reconstruct_bias);
                    axpy(&mut sp.residual_bias, -learning_rate, &gs.residual_bias);
                }
            }
        }
    }

    /// Binary embedding of `text` with all configured steps of `side`.
    pub fn encode(&self, side: Side, text: &str) -> Result<RbeEmbedding> {
        let features = self.featurizer().featurize(text)?;
        self.forward(side, &features, self.config.steps(side), Activation::Sign)?
            .embedding(self.config.residual_weights)
    }

    /// The refined vector as floats; for full-precision models this is the
    /// only meaningful output.
    pub fn encode_dense(&self, side: Side, text: &str) -> Result<Vec<f64>> {
        let features = self.featurizer().featurize(text)?;
        Ok(self
            .forward(side, &features, self.config.steps(side), Activation::Sign)?
            .refined_vector()
            .to_vec())
    }

    pub fn anneal(&mut self) {
        self.alpha *= self.config.alpha_growth;
    }
}
