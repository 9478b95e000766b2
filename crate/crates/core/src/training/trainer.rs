use rand::seq::SliceRandom;
use serde::Serialize;

use super::{advantage, compute_reward, total_loss, LossBreakdown, PPOConfig, RolloutRecord};
use crate::env::{QuestionKind, Session};
use crate::memory::{MemoryBank, DEFAULT_CAPACITY};
use crate::model::{forward_step, sample_action, Model, Observation, StepCache, StepContext, TrunkFlow};
use crate::numerics::log_softmax;
use crate::{rng, Error, Result};

/// Lifetime of the memory bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankScope {
    /// Cleared at the start of every session.
    Session,
    /// One FIFO bank shared by all sessions.
    Global,
}

impl BankScope {
    pub fn name(self) -> &'static str {
        match self {
            BankScope::Session => "session",
            BankScope::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "session" => Ok(BankScope::Session),
            "global" => Ok(BankScope::Global),
            other => Err(Error::config(format!("unknown bank scope {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub ppo: PPOConfig,
    /// Passes over the training sessions; 0 leaves the model untouched.
    pub passes: usize,
    /// When false every belief is the zero vector.
    pub use_belief: bool,
    /// Keep policy and value gradients out of the backbone and encoders.
    pub freeze_backbone: bool,
    pub bank_scope: BankScope,
    pub bank_capacity: usize,
    /// Sessions between metrics lines; `None` emits one line per pass.
    pub eval_interval: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ppo: PPOConfig::default(),
            passes: 15,
            use_belief: true,
            freeze_backbone: false,
            bank_scope: BankScope::Session,
            bank_capacity: DEFAULT_CAPACITY,
            eval_interval: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.eval_interval == Some(0) || self.bank_capacity == 0 {
            return Err(Error::config("eval interval and bank capacity must be positive"));
        }
        Ok(())
    }

    fn flow(&self) -> TrunkFlow {
        if self.freeze_backbone {
            TrunkFlow::AnswerHeadOnly
        } else {
            TrunkFlow::All
        }
    }
}

/// One metrics line, summarizing rollouts and updates since the previous one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub checkpoint: usize,
    pub sessions_seen: usize,
    pub mean_reward: f64,
    pub accuracy_overall: f64,
    pub accuracy_context: Option<f64>,
    pub accuracy_observable: Option<f64>,
    pub ce_loss: Option<f64>,
    pub ppo_objective: Option<f64>,
    pub value_loss: Option<f64>,
    pub entropy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub metrics: Vec<Metrics>,
    /// The bank as it stood after the last rollout.
    pub bank: MemoryBank,
    /// Adam steps taken.
    pub updates: u64,
}

/// Retrieve (when enabled) and run the forward pass for one observation.
pub(crate) fn respond(
    model: &Model,
    bank: &MemoryBank,
    obs: &Observation,
    use_belief: bool,
) -> Result<(StepContext, StepCache)> {
    model.check_observation(obs)?;
    let ctx = if use_belief {
        let z = model.embed(obs)?;
        let result = bank.retrieve(&z.values, &model.config().retrieval)?;
        StepContext::from_retrieval(bank, &result)?
    } else {
        StepContext::empty()
    };
    let cache = forward_step(model.config(), model.params().values(), obs, &ctx, use_belief)?;
    Ok((ctx, cache))
}

#[derive(Default)]
struct Window {
    questions: [usize; 2],
    correct: [usize; 2],
    losses: LossBreakdown,
    loss_evals: usize,
}

impl Window {
    fn slot(kind: QuestionKind) -> usize {
        match kind {
            QuestionKind::Observable => 0,
            QuestionKind::Context => 1,
        }
    }

    fn finish(&mut self, checkpoint: usize, sessions_seen: usize) -> Metrics {
        let ratio = |c: usize, n: usize| (n > 0).then(|| c as f64 / n as f64);
        let n = self.questions[0] + self.questions[1];
        let acc = ratio(self.correct[0] + self.correct[1], n).unwrap_or(0.0);
        let mean = |x: f64| (self.loss_evals > 0).then(|| x / self.loss_evals as f64);
        let m = Metrics {
            checkpoint,
            sessions_seen,
            mean_reward: acc,
            accuracy_overall: acc,
            accuracy_context: ratio(self.correct[1], self.questions[1]),
            accuracy_observable: ratio(self.correct[0], self.questions[0]),
            ce_loss: mean(self.losses.ce),
            ppo_objective: mean(self.losses.ppo_objective),
            value_loss: mean(self.losses.value),
            entropy: mean(self.losses.entropy),
        };
        *self = Window::default();
        m
    }
}

struct Optimizer<'a> {
    cfg: &'a TrainConfig,
    shuffles: u64,
    updates: u64,
}

impl Optimizer<'_> {
    /// `epochs` passes of shuffled minibatches over `buffer`, one Adam step each.
    fn run(&mut self, model: &mut Model, buffer: &[RolloutRecord], window: &mut Window) -> Result<()> {
        let ppo = &self.cfg.ppo;
        let model_cfg = model.config().clone();
        let mut order: Vec<usize> = (0..buffer.len()).collect();
        let mut batch = Vec::with_capacity(ppo.minibatch);
        for _ in 0..ppo.epochs {
            order.shuffle(&mut rng::stream(ppo.seed, "train.minibatch", self.shuffles));
            for chunk in order.chunks(ppo.minibatch) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| buffer[i].clone()));
                let params = model.params_mut();
                let l = total_loss(&model_cfg, params, &batch, ppo, self.cfg.flow())?;
                let t = params.step() + 1;
                params.adam_step(&ppo.adam, t)?;
                window.losses.ce += l.ce;
                window.losses.ppo_objective += l.ppo_objective;
                window.losses.value += l.value;
                window.losses.entropy += l.entropy;
                window.loss_evals += 1;
                self.updates += 1;
            }
            self.shuffles += 1;
        }
        Ok(())
    }
}

/// Run the rollout / update loop over `sessions` for `cfg.passes` passes.
///
/// Each metrics line is handed to `on_metrics` as soon as it is produced.
pub fn train(
    sessions: &[Session],
    model: &mut Model,
    cfg: &TrainConfig,
    mut on_metrics: impl FnMut(&Metrics) -> Result<()>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let mc = model.config().clone();
    let mut bank = MemoryBank::new(mc.d_z(), mc.d_c, cfg.bank_capacity, 0)?;
    let mut buffer: Vec<RolloutRecord> = Vec::with_capacity(cfg.ppo.rollout_batch);
    let mut window = Window::default();
    let mut metrics = Vec::new();
    let mut optimizer = Optimizer {
        cfg,
        shuffles: 0,
        updates: 0,
    };
    let mut sessions_seen = 0usize;

    let total_sessions = cfg.passes * sessions.len();
    for pass in 0..cfg.passes {
        let mut order: Vec<usize> = (0..sessions.len()).collect();
        order.shuffle(&mut rng::stream(cfg.ppo.seed, "train.order", pass as u64));
        for &si in &order {
            let session = &sessions[si];
            if cfg.bank_scope == BankScope::Session {
                bank.reset(session.session_id);
            }
            let mut act_rng = rng::stream(
                cfg.ppo.seed,
                "train.action",
                ((pass as u64) << 32) | (si as u64 & 0xffff_ffff),
            );
            for step in &session.steps {
                let obs = step.observation();
                let (context, cache) = respond(model, &bank, &obs, cfg.use_belief)?;
                let log_p = log_softmax(&cache.heads.policy_logits)?;
                let probs: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
                let action = sample_action(&probs, &mut act_rng);
                let reward = compute_reward(action, step.label);
                let payload = model.context_payload(&obs)?;
                bank.insert(&cache.z, &payload, action, reward)?;

                let slot = Window::slot(step.kind);
                window.questions[slot] += 1;
                window.correct[slot] += usize::from(reward == 1.0);

                let mut record = RolloutRecord {
                    observation: obs,
                    context,
                    kind: step.kind,
                    h: cache.h,
                    action,
                    old_log_prob: log_p[action],
                    reward,
                    value: cache.heads.value,
                    advantage: 0.0,
                    label: step.label,
                    session_id: session.session_id,
                    step: step.step,
                };
                record.advantage = advantage(&record, record.value)?;
                buffer.push(record);
                if buffer.len() >= cfg.ppo.rollout_batch {
                    optimizer.run(model, &buffer, &mut window)?;
                    buffer.clear();
                }
            }
            sessions_seen += 1;
            let last = sessions_seen == total_sessions;
            if last && !buffer.is_empty() {
                optimizer.run(model, &buffer, &mut window)?;
                buffer.clear();
            }
            let due = match cfg.eval_interval {
                Some(n) => sessions_seen % n == 0,
                None => sessions_seen % sessions.len() == 0,
            };
            if last || due {
                let m = window.finish(metrics.len() + 1, sessions_seen);
                on_metrics(&m)?;
                metrics.push(m);
            }
        }
    }
    Ok(TrainSummary {
        metrics,
        bank,
        updates: optimizer.updates,
    })
}
