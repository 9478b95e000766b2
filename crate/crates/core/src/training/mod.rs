//! Rewards, advantages, the clipped surrogate, the weighted total loss and
//! the training loop.

mod trainer;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::QuestionKind;
use crate::memory::{MemoryBank, DEFAULT_CAPACITY};
use crate::model::{
    backward_step, forward_step, sample_action, HeadGrads, Model, ModelConfig, Observation, StepContext, TrunkFlow,
};
use crate::numerics::{log_softmax, softmax, AdamConfig, DenseMatrix, Differentiable, ParamSet};
use crate::{rng, Error, Result};

pub use trainer::{train, BankScope, Metrics, TrainConfig, TrainSummary};
pub(crate) use trainer::respond;

/// 1 for a correct answer, 0 otherwise.
pub fn compute_reward(action: usize, label: usize) -> f64 {
    if action == label {
        1.0
    } else {
        0.0
    }
}

/// One-step advantage `r - V(h)`.
pub fn advantage(record: &RolloutRecord, value_prediction: f64) -> Result<f64> {
    if !value_prediction.is_finite() {
        return Err(Error::numeric(format!("value prediction is {value_prediction}")));
    }
    Ok(record.reward - value_prediction)
}

/// One clipped-surrogate evaluation with its derivative in the new log-probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateTerm {
    pub value: f64,
    pub ratio: f64,
    /// Whether the clipped branch is the (strict) minimum.
    pub clipped: bool,
    pub d_new_log_prob: f64,
}

pub fn surrogate_term(new_log_prob: f64, old_log_prob: f64, advantage: f64, clip: f64) -> Result<SurrogateTerm> {
    let ratio = (new_log_prob - old_log_prob).exp();
    if !ratio.is_finite() || !advantage.is_finite() {
        return Err(Error::numeric(format!(
            "probability ratio {ratio} (log-probs {new_log_prob} vs {old_log_prob}, advantage {advantage})"
        )));
    }
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    Ok(if unclipped <= clipped {
        SurrogateTerm {
            value: unclipped,
            ratio,
            clipped: false,
            d_new_log_prob: unclipped,
        }
    } else {
        SurrogateTerm {
            value: clipped,
            ratio,
            clipped: true,
            d_new_log_prob: 0.0,
        }
    })
}

/// `min(r·Â, clip(r, 1-ε, 1+ε)·Â)` with `r = exp(new - old)`.
pub fn ppo_surrogate(new_log_prob: f64, old_log_prob: f64, advantage: f64, clip: f64) -> Result<f64> {
    Ok(surrogate_term(new_log_prob, old_log_prob, advantage, clip)?.value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PPOConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Records collected before each optimization phase.
    pub rollout_batch: usize,
    pub w_ce: f64,
    pub w_ppo: f64,
    pub w_value: f64,
    pub entropy_coef: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PPOConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs: 4,
            minibatch: 64,
            rollout_batch: 512,
            w_ce: 1.0,
            w_ppo: 1.0,
            w_value: 0.5,
            entropy_coef: 0.01,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::config(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        let weights = [self.w_ce, self.w_ppo, self.w_value, self.entropy_coef];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config(format!("loss weights must be finite and >= 0, got {weights:?}")));
        }
        if self.w_ce == 0.0 && self.w_ppo == 0.0 && self.w_value == 0.0 {
            return Err(Error::config("at least one of w_ce, w_ppo, w_value must be positive"));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout_batch == 0 {
            return Err(Error::config("epochs, minibatch and rollout batch must be positive"));
        }
        self.adam.validate()
    }
}

/// One answered question, frozen at rollout time.
///
/// The retrieval set is stored so that later epochs recompute the belief
/// against the same memory the action was sampled under.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub observation: Observation,
    pub context: StepContext,
    pub kind: QuestionKind,
    /// Latent state at rollout time.
    pub h: Vec<f64>,
    pub action: usize,
    pub old_log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub advantage: f64,
    pub label: usize,
    pub session_id: u64,
    pub step: usize,
}

/// Batch means of the individual terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    /// Mean surrogate (the quantity maximized).
    pub ppo_objective: f64,
    pub value: f64,
    pub entropy: f64,
}

/// `w_ce·CE + w_ppo·(-surrogate) + w_value·(V - r)² - entropy_coef·H`, averaged
/// over `records`. Gradients overwrite `params`' gradient buffers.
pub fn total_loss(
    model_cfg: &ModelConfig,
    params: &mut ParamSet,
    records: &[RolloutRecord],
    ppo: &PPOConfig,
    flow: TrunkFlow,
) -> Result<LossBreakdown> {
    params.zero_grad();
    let (values, grads) = params.split_mut();
    evaluate(model_cfg, values, Some(grads), records, ppo, flow)
}

pub(crate) fn evaluate(
    model_cfg: &ModelConfig,
    values: &[DenseMatrix],
    mut grads: Option<&mut [DenseMatrix]>,
    records: &[RolloutRecord],
    ppo: &PPOConfig,
    flow: TrunkFlow,
) -> Result<LossBreakdown> {
    if records.is_empty() {
        return Err(Error::Contract("total_loss needs a nonempty batch".into()));
    }
    let scale = 1.0 / records.len() as f64;
    let mut out = LossBreakdown::default();
    for rec in records {
        let cache = forward_step(model_cfg, values, &rec.observation, &rec.context, true)?;
        let k = model_cfg.k_ans;
        if rec.label >= k || rec.action >= k {
            return Err(Error::Index {
                index: rec.label.max(rec.action),
                len: k,
            });
        }
        let ce_probs = softmax(&cache.heads.ce_logits)?;
        let ce = -ce_probs[rec.label].max(crate::numerics::PROB_FLOOR).ln();
        let log_p = log_softmax(&cache.heads.policy_logits)?;
        let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        let entropy: f64 = -p.iter().zip(&log_p).map(|(p, l)| p * l).sum::<f64>();
        let surrogate = surrogate_term(log_p[rec.action], rec.old_log_prob, rec.advantage, ppo.clip)?;
        let v_err = cache.heads.value - rec.reward;

        let term = ppo.w_ce * ce - ppo.w_ppo * surrogate.value + ppo.w_value * v_err * v_err
            - ppo.entropy_coef * entropy;
        if !term.is_finite() {
            return Err(Error::numeric(format!(
                "loss is {term} at session {} step {} (ce {ce}, surrogate {}, value error {v_err}, entropy {entropy})",
                rec.session_id, rec.step, surrogate.value
            )));
        }
        out.total += scale * term;
        out.ce += scale * ce;
        out.ppo_objective += scale * surrogate.value;
        out.value += scale * v_err * v_err;
        out.entropy += scale * entropy;

        if let Some(grads) = grads.as_deref_mut() {
            let mut g = HeadGrads::zeros(k);
            for i in 0..k {
                let onehot_y = if i == rec.label { 1.0 } else { 0.0 };
                let onehot_a = if i == rec.action { 1.0 } else { 0.0 };
                g.ce_logits[i] = scale * ppo.w_ce * (ce_probs[i] - onehot_y);
                g.policy_logits[i] = scale
                    * (-ppo.w_ppo * surrogate.d_new_log_prob * (onehot_a - p[i])
                        + ppo.entropy_coef * p[i] * (log_p[i] + entropy));
            }
            g.value = scale * 2.0 * ppo.w_value * v_err;
            backward_step(model_cfg, values, grads, &rec.context, &cache, &g, flow)?;
        }
    }
    Ok(out)
}

/// [`total_loss`] over a fixed batch as a [`Differentiable`] function of the parameters.
pub struct BatchLoss<'a> {
    pub model_cfg: &'a ModelConfig,
    pub records: &'a [RolloutRecord],
    pub ppo: &'a PPOConfig,
    pub flow: TrunkFlow,
}

impl Differentiable for BatchLoss<'_> {
    fn loss(&self, params: &ParamSet) -> Result<f64> {
        Ok(evaluate(self.model_cfg, params.values(), None, self.records, self.ppo, self.flow)?.total)
    }

    fn loss_and_grad(&self, params: &mut ParamSet) -> Result<f64> {
        Ok(total_loss(self.model_cfg, params, self.records, self.ppo, self.flow)?.total)
    }
}

/// `n` records sampled from `model` on Gaussian observations with random
/// labels, each retrieving from a bank of the earlier ones. Old log-probs are
/// shifted by up to `±drift` so ratios move off 1 (`drift = 0` is a synced batch).
pub fn synthetic_batch(model: &Model, n: usize, seed: u64, drift: f64) -> Result<Vec<RolloutRecord>> {
    let cfg = model.config();
    let mut r = rng::stream(seed, "training.synthetic_batch", 0);
    let mut bank = MemoryBank::new(cfg.d_z(), cfg.d_c, DEFAULT_CAPACITY, 0)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let obs = Observation {
            visual_raw: (0..cfg.d_v).map(|_| r.sample(StandardNormal)).collect(),
            language_raw: (0..cfg.d_l).map(|_| r.sample(StandardNormal)).collect(),
            candidate_count: cfg.k_ans,
        };
        let (context, cache) = respond(model, &bank, &obs, true)?;
        let log_p = log_softmax(&cache.heads.policy_logits)?;
        let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        let action = sample_action(&p, &mut r);
        let label = r.random_range(0..cfg.k_ans);
        let reward = compute_reward(action, label);
        bank.insert(&cache.z, &model.context_payload(&obs)?, action, reward)?;
        let shift = if drift > 0.0 { r.random_range(-drift..drift) } else { 0.0 };
        let mut rec = RolloutRecord {
            observation: obs,
            context,
            kind: if i % 2 == 0 { QuestionKind::Observable } else { QuestionKind::Context },
            h: cache.h,
            action,
            old_log_prob: log_p[action] + shift,
            reward,
            value: cache.heads.value,
            advantage: 0.0,
            label,
            session_id: 0,
            step: i,
        };
        rec.advantage = advantage(&rec, rec.value)?;
        out.push(rec);
    }
    Ok(out)
}
