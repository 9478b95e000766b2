//! Encoders, context payload, belief-conditioned fusion backbone and heads.
//!
//! ```text
//! v ─ enc_vis ─┐
//!              ├─ concat, L2-normalize ─ z ─┬──────────────┐
//! ℓ ─ enc_lang ┘                            │ top-K memory │
//!                                           └─ belief b ───┴─ concat ─ backbone ─ h ─┬─ ce_head
//!                                                                                    ├─ policy_head
//!                                                                                    └─ value_head
//! ```
//!
//! `c = P·[v; ℓ]` is the payload written to memory; `P` is a fixed seeded
//! projection that never receives gradients.

mod checkpoint;
mod forward;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::memory::{BeliefVector, MemoryBank, RetrievalConfig, RetrievalResult};
use crate::numerics::{argmax, l2_norm, softmax, DenseMatrix, ParamId, ParamSet};
use crate::{rng, Error, Result};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{backward_step, forward_step, HeadGrads, StepCache, TrunkFlow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::config(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_l: usize,
    pub d_zv: usize,
    pub d_zl: usize,
    pub d_c: usize,
    pub d_h: usize,
    pub k_ans: usize,
    pub retrieval: RetrievalConfig,
    pub backbone_activation: Activation,
    /// Use the answer head's logits as the policy logits.
    pub share_heads: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_v: 48,
            d_l: 24,
            d_zv: 16,
            d_zl: 16,
            d_c: 16,
            d_h: 32,
            k_ans: 4,
            retrieval: RetrievalConfig::default(),
            backbone_activation: Activation::Tanh,
            share_heads: false,
        }
    }
}

impl ModelConfig {
    pub fn d_z(&self) -> usize {
        self.d_zv + self.d_zl
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_v", self.d_v),
            ("d_l", self.d_l),
            ("d_zv", self.d_zv),
            ("d_zl", self.d_zl),
            ("d_c", self.d_c),
            ("d_h", self.d_h),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.k_ans < 2 {
            return Err(Error::config("at least two answer candidates are required"));
        }
        if self.retrieval.k == 0 {
            return Err(Error::config("retrieval k must be at least 1"));
        }
        if !(self.retrieval.temperature > 0.0 && self.retrieval.temperature.is_finite()) {
            return Err(Error::config("retrieval temperature must be positive"));
        }
        Ok(())
    }
}

/// Model-facing view of one QA step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub visual_raw: Vec<f64>,
    pub language_raw: Vec<f64>,
    pub candidate_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointEmbedding {
    pub values: Vec<f64>,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadsOutput {
    pub ce_logits: Vec<f64>,
    pub policy_logits: Vec<f64>,
    pub value: f64,
}

impl HeadsOutput {
    pub fn policy_probs(&self) -> Result<Vec<f64>> {
        softmax(&self.policy_logits)
    }

    pub fn ce_probs(&self) -> Result<Vec<f64>> {
        softmax(&self.ce_logits)
    }
}

/// Fixed random projection producing memory payloads. Not trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextProjection {
    seed: u64,
    matrix: DenseMatrix,
}

impl ContextProjection {
    pub fn new(seed: u64, d_c: usize, d_in: usize) -> Self {
        let mut r = rng::stream(seed, "model.context_projection", 0);
        let scale = 1.0 / (d_c as f64).sqrt();
        let matrix = DenseMatrix::from_fn(d_c, d_in, |_, _| scale * r.sample::<f64, _>(StandardNormal));
        Self { seed, matrix }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }
}

/// Retrieved neighbours of one step, frozen in retrieval order.
///
/// Training recomputes similarities and weights from these snapshots, so the
/// gradient reaches the query encoders while stored keys and payloads stay
/// constants.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepContext {
    pub keys: Vec<Vec<f64>>,
    pub payloads: Vec<Vec<f64>>,
}

impl StepContext {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn from_retrieval(bank: &MemoryBank, result: &RetrievalResult) -> Result<Self> {
        let mut ctx = Self::empty();
        for &idx in &result.indices {
            let e = bank
                .get(idx)
                .ok_or_else(|| Error::Consistency(format!("entry {idx} is no longer in the bank")))?;
            ctx.keys.push(e.key.iter().map(|&k| k as f64).collect());
            ctx.payloads.push(e.value.iter().map(|&c| c as f64).collect());
        }
        Ok(ctx)
    }
}

// Fixed parameter layout; `Model::new` registers them in this order.
pub(crate) const ENC_VIS_W: ParamId = ParamId(0);
pub(crate) const ENC_VIS_B: ParamId = ParamId(1);
pub(crate) const ENC_LANG_W: ParamId = ParamId(2);
pub(crate) const ENC_LANG_B: ParamId = ParamId(3);
pub(crate) const BB0_W: ParamId = ParamId(4);
pub(crate) const BB0_B: ParamId = ParamId(5);
pub(crate) const BB1_W: ParamId = ParamId(6);
pub(crate) const BB1_B: ParamId = ParamId(7);
pub(crate) const CE_W: ParamId = ParamId(8);
pub(crate) const CE_B: ParamId = ParamId(9);
pub(crate) const POL_W: ParamId = ParamId(10);
pub(crate) const POL_B: ParamId = ParamId(11);
pub(crate) const VAL_W: ParamId = ParamId(12);
pub(crate) const VAL_B: ParamId = ParamId(13);

/// Names of the backbone/encoder parameters (θ) and head parameters (φ and the critic).
pub const THETA_PARAMS: [&str; 8] = [
    "enc_vis.w",
    "enc_vis.b",
    "enc_lang.w",
    "enc_lang.b",
    "backbone.0.w",
    "backbone.0.b",
    "backbone.1.w",
    "backbone.1.b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    projection: ContextProjection,
}

fn glorot(r: &mut impl Rng, rows: usize, cols: usize) -> DenseMatrix {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| std * r.sample::<f64, _>(StandardNormal))
}

impl Model {
    /// Glorot-normal weights and zero biases from `init_seed`; the payload
    /// projection from `projection_seed`.
    pub fn new(config: ModelConfig, init_seed: u64, projection_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(init_seed, "model.init", 0);
        let c = &config;
        let mut params = ParamSet::new();
        let mut layer = |params: &mut ParamSet, name: &str, rows: usize, cols: usize| {
            params.add(format!("{name}.w"), glorot(&mut r, rows, cols));
            params.add(format!("{name}.b"), DenseMatrix::zeros(rows, 1));
        };
        layer(&mut params, "enc_vis", c.d_zv, c.d_v);
        layer(&mut params, "enc_lang", c.d_zl, c.d_l);
        layer(&mut params, "backbone.0", c.d_h, c.d_z() + c.d_c);
        layer(&mut params, "backbone.1", c.d_h, c.d_h);
        layer(&mut params, "ce_head", c.k_ans, c.d_h);
        layer(&mut params, "policy_head", c.k_ans, c.d_h);
        layer(&mut params, "value_head", 1, c.d_h);
        debug_assert_eq!(params.name(VAL_B), "value_head.b");
        let projection = ContextProjection::new(projection_seed, c.d_c, c.d_v + c.d_l);
        Ok(Self {
            config,
            params,
            projection,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn projection(&self) -> &ContextProjection {
        &self.projection
    }

    /// Runtime options that do not change parameter shapes.
    pub fn set_retrieval(&mut self, retrieval: RetrievalConfig) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.retrieval = retrieval;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    /// Zero the three heads: uniform policy, zero value.
    pub fn zero_heads(&mut self) {
        for id in [CE_W, CE_B, POL_W, POL_B, VAL_W, VAL_B] {
            self.params.value_mut(id).fill(0.0);
        }
    }

    pub fn check_observation(&self, obs: &Observation) -> Result<()> {
        let c = &self.config;
        if obs.visual_raw.len() != c.d_v || obs.language_raw.len() != c.d_l {
            return Err(Error::shape(
                "observation",
                format!("visual[{}], language[{}]", c.d_v, c.d_l),
                format!("visual[{}], language[{}]", obs.visual_raw.len(), obs.language_raw.len()),
            ));
        }
        if obs.candidate_count != c.k_ans {
            return Err(Error::shape("observation candidates", c.k_ans, obs.candidate_count));
        }
        Ok(())
    }

    /// `z = normalize([enc_vis(v); enc_lang(ℓ)])`.
    pub fn embed(&self, obs: &Observation) -> Result<JointEmbedding> {
        self.check_observation(obs)?;
        let (values, _) = forward::embed_parts(&self.config, self.params.values(), obs)?;
        Ok(JointEmbedding {
            values,
            normalized: true,
        })
    }

    /// `c = P·[v; ℓ]`.
    pub fn context_payload(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.check_observation(obs)?;
        let mut x = obs.visual_raw.clone();
        x.extend_from_slice(&obs.language_raw);
        self.projection.matrix.matvec(&x)
    }

    /// `h = backbone([z; b])`.
    pub fn fuse(&self, z: &JointEmbedding, b: &BeliefVector) -> Result<LatentState> {
        let c = &self.config;
        if z.values.len() != c.d_z() || b.values.len() != c.d_c {
            return Err(Error::shape(
                "fuse",
                format!("z[{}], b[{}]", c.d_z(), c.d_c),
                format!("z[{}], b[{}]", z.values.len(), b.values.len()),
            ));
        }
        let mut x = z.values.clone();
        x.extend_from_slice(&b.values);
        let (h, _) = forward::backbone(c, self.params.values(), &x)?;
        Ok(LatentState { values: h })
    }

    pub fn heads_forward(&self, h: &LatentState) -> Result<HeadsOutput> {
        if h.values.len() != self.config.d_h {
            return Err(Error::shape("heads_forward", self.config.d_h, h.values.len()));
        }
        forward::heads(&self.config, self.params.values(), &h.values)
    }

    /// Retrieve from `bank` with `z` as query and pool the belief.
    pub fn belief(&self, bank: &MemoryBank, z: &JointEmbedding) -> Result<(BeliefVector, StepContext)> {
        let result = bank.retrieve(&z.values, &self.config.retrieval)?;
        let belief = bank.aggregate_belief(&result)?;
        let ctx = StepContext::from_retrieval(bank, &result)?;
        Ok((belief, ctx))
    }

    /// Full differentiable forward pass for one step.
    pub fn forward(&self, obs: &Observation, ctx: &StepContext, use_belief: bool) -> Result<StepCache> {
        self.check_observation(obs)?;
        forward_step(&self.config, self.params.values(), obs, ctx, use_belief)
    }
}

/// Inverse-CDF draw from `probs`.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    last_positive
}

/// Most probable action, lowest index on ties.
pub fn greedy_action(probs: &[f64]) -> usize {
    argmax(probs).unwrap_or(0)
}

pub(crate) fn norm_or_error(op: &'static str, v: &[f64]) -> Result<f64> {
    let n = l2_norm(v);
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(Error::numeric(format!("{op}: vector norm is {n}")))
    }
}
