//! Evaluation: run a model over sessions and summarize its answers.

use serde::Serialize;

use crate::env::{QuestionKind, Session};
use crate::memory::{MemoryBank, DEFAULT_CAPACITY};
use crate::model::{greedy_action, sample_action, Model};
use crate::numerics::softmax;
use crate::training::{compute_reward, BankScope};
use crate::{rng, Error, Result};

/// Which head answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerSource {
    Policy,
    /// The cross-entropy answer head.
    Answer,
}

impl AnswerSource {
    pub fn name(self) -> &'static str {
        match self {
            AnswerSource::Policy => "policy",
            AnswerSource::Answer => "answer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "policy" => Ok(AnswerSource::Policy),
            "answer" | "ce" => Ok(AnswerSource::Answer),
            other => Err(Error::config(format!("unknown answer head {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub use_belief: bool,
    /// Argmax answers; otherwise sampled with `seed`.
    pub greedy: bool,
    pub source: AnswerSource,
    pub bank_scope: BankScope,
    pub bank_capacity: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            use_belief: true,
            greedy: true,
            source: AnswerSource::Policy,
            bank_scope: BankScope::Session,
            bank_capacity: DEFAULT_CAPACITY,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub mean: f64,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

impl Distribution {
    /// Summary of `values`; quantiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            p25: q(0.25),
            median: q(0.5),
            p75: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub questions: usize,
    pub sessions: usize,
    pub accuracy_overall: f64,
    pub accuracy_context: Option<f64>,
    pub accuracy_observable: Option<f64>,
    pub context_questions: usize,
    pub observable_questions: usize,
    pub mean_reward: f64,
    pub per_session_accuracy: Option<Distribution>,
    /// `confusion[label][prediction]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Score `predictions[s][t]` against `sessions[s].steps[t]`.
pub fn score(sessions: &[Session], predictions: &[Vec<usize>]) -> Result<EvalReport> {
    if predictions.len() != sessions.len() {
        return Err(Error::shape("score", sessions.len(), predictions.len()));
    }
    let k = sessions
        .iter()
        .flat_map(|s| &s.steps)
        .map(|t| t.k_ans)
        .max()
        .unwrap_or(0);
    let mut confusion = vec![vec![0u64; k]; k];
    let (mut n, mut correct) = ([0usize; 2], [0usize; 2]);
    let mut per_session = Vec::with_capacity(sessions.len());
    let mut reward = 0.0;
    for (s, preds) in sessions.iter().zip(predictions) {
        if preds.len() != s.steps.len() {
            return Err(Error::shape("score session", s.steps.len(), preds.len()));
        }
        let mut hits = 0usize;
        for (t, &a) in s.steps.iter().zip(preds) {
            if a >= t.k_ans {
                return Err(Error::Index { index: a, len: t.k_ans });
            }
            let slot = usize::from(t.kind == QuestionKind::Context);
            let r = compute_reward(a, t.label);
            n[slot] += 1;
            correct[slot] += r as usize;
            hits += r as usize;
            reward += r;
            confusion[t.label][a] += 1;
        }
        if !s.steps.is_empty() {
            per_session.push(hits as f64 / s.steps.len() as f64);
        }
    }
    let total = n[0] + n[1];
    let ratio = |c: usize, n: usize| (n > 0).then(|| c as f64 / n as f64);
    let overall = ratio(correct[0] + correct[1], total).unwrap_or(0.0);
    Ok(EvalReport {
        questions: total,
        sessions: sessions.len(),
        accuracy_overall: overall,
        accuracy_context: ratio(correct[1], n[1]),
        accuracy_observable: ratio(correct[0], n[0]),
        context_questions: n[1],
        observable_questions: n[0],
        mean_reward: if total > 0 { reward / total as f64 } else { 0.0 },
        per_session_accuracy: Distribution::of(&per_session),
        confusion,
    })
}

/// The model's answers to every question, with memory written as it goes.
pub fn predict(sessions: &[Session], model: &Model, cfg: &EvalConfig) -> Result<Vec<Vec<usize>>> {
    let mc = model.config();
    let mut bank = MemoryBank::new(mc.d_z(), mc.d_c, cfg.bank_capacity, 0)?;
    let mut out = Vec::with_capacity(sessions.len());
    for (si, s) in sessions.iter().enumerate() {
        if cfg.bank_scope == BankScope::Session {
            bank.reset(s.session_id);
        }
        let mut r = rng::stream(cfg.seed, "eval.action", si as u64);
        let mut answers = Vec::with_capacity(s.steps.len());
        for t in &s.steps {
            let obs = t.observation();
            let (_, cache) = crate::training::respond(model, &bank, &obs, cfg.use_belief)?;
            let logits = match cfg.source {
                AnswerSource::Policy => &cache.heads.policy_logits,
                AnswerSource::Answer => &cache.heads.ce_logits,
            };
            let probs = softmax(logits)?;
            let a = if cfg.greedy {
                greedy_action(&probs)
            } else {
                sample_action(&probs, &mut r)
            };
            let payload = model.context_payload(&obs)?;
            bank.insert(&cache.z, &payload, a, compute_reward(a, t.label))?;
            answers.push(a);
        }
        out.push(answers);
    }
    Ok(out)
}

pub fn evaluate(sessions: &[Session], model: &Model, cfg: &EvalConfig) -> Result<EvalReport> {
    score(sessions, &predict(sessions, model, cfg)?)
}
