//! Synthetic partially observable multiple-choice QA.
//!
//! Each session has a latent intent `q` that never changes within it. Some
//! observable steps carry a cue: the intent prototype `ρ_q` written into the
//! last `cue_dim` visual coordinates. Observable questions are answered from
//! the current visual features alone (argmax of fixed linear probes over the
//! scene coordinates). Context questions carry no cue; their answer is
//! `(q + offset) mod k_ans`, with the offset spelled out in the language
//! features, so the only route to `q` is an earlier cue-bearing step.
//!
//! Language layout: `[observable flag, context flag, one-hot offset (k_ans), 0…]`,
//! noiseless. Visual layout: `[scene (d_v - cue_dim) | cue (cue_dim)]` plus
//! Gaussian noise on every coordinate.

mod io;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::Observation;
use crate::numerics::{argmax, dot, l2_norm};
use crate::{rng, Error, Result};

pub use io::{read_dataset, write_dataset};

/// Prototypes must satisfy `ρ_i · ρ_j < PROTOTYPE_MAX_DOT` for `i ≠ j`.
pub const PROTOTYPE_MAX_DOT: f64 = 0.3;
const PROTOTYPE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    /// Number of latent intents `Q`.
    pub intents: usize,
    /// Steps per session `T`.
    pub steps: usize,
    pub sessions: usize,
    /// Standard deviation σ of the Gaussian noise on every visual coordinate.
    pub noise: f64,
    /// Probability that a step (after the first) asks a context question.
    pub context_fraction: f64,
    /// Expected fraction of all steps that carry the intent cue.
    pub cue_fraction: f64,
    pub k_ans: usize,
    pub d_v: usize,
    pub d_l: usize,
    pub cue_dim: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            intents: 8,
            steps: 20,
            sessions: 3000,
            noise: 0.1,
            context_fraction: 0.5,
            cue_fraction: 0.4,
            k_ans: 4,
            d_v: 48,
            d_l: 24,
            cue_dim: 16,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.intents < 2 {
            return fail(format!("need at least 2 intents, got {}", self.intents));
        }
        if self.steps == 0 || self.sessions == 0 {
            return fail("steps and sessions must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if !(0.0..1.0).contains(&self.context_fraction) {
            return fail(format!("context fraction must lie in [0, 1), got {}", self.context_fraction));
        }
        if !(0.0..=1.0 - self.context_fraction).contains(&self.cue_fraction) {
            return fail(format!(
                "cue fraction must lie in [0, 1 - context fraction], got {}",
                self.cue_fraction
            ));
        }
        if self.k_ans < 2 {
            return fail("k_ans must be at least 2".into());
        }
        if self.intents % self.k_ans != 0 {
            return fail(format!(
                "intents ({}) must be a multiple of k_ans ({}) so context answers are balanced",
                self.intents, self.k_ans
            ));
        }
        if self.d_l < 2 + self.k_ans {
            return fail(format!("d_l must be at least 2 + k_ans = {}", 2 + self.k_ans));
        }
        if self.cue_dim == 0 || self.cue_dim >= self.d_v {
            return fail(format!("cue_dim must lie in [1, d_v), got {}", self.cue_dim));
        }
        Ok(())
    }

    pub fn scene_dim(&self) -> usize {
        self.d_v - self.cue_dim
    }

    /// Probability that an observable step carries the cue.
    fn cue_probability(&self) -> f64 {
        let observable = 1.0 - self.context_fraction;
        (self.cue_fraction / observable).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    Observable,
    Context,
}

impl QuestionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionKind::Observable => "observable",
            QuestionKind::Context => "context",
        }
    }
}

/// One serialized QA step. `intent_truth` is for analysis only; models see
/// [`QAStep::observation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAStep {
    pub session_id: u64,
    pub step: usize,
    pub kind: QuestionKind,
    pub visual_raw: Vec<f64>,
    pub language_raw: Vec<f64>,
    pub k_ans: usize,
    pub label: usize,
    pub cue_present: bool,
    pub intent_truth: usize,
}

impl QAStep {
    pub fn observation(&self) -> Observation {
        Observation {
            visual_raw: self.visual_raw.clone(),
            language_raw: self.language_raw.clone(),
            candidate_count: self.k_ans,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: u64,
    pub intent: usize,
    pub steps: Vec<QAStep>,
}

/// Fixed generator constants derived from the seed: intent prototypes and
/// observable-answer probes.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    prototypes: Vec<Vec<f64>>,
    probes: Vec<Vec<f64>>,
}

fn unit_gaussian(r: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let norm = l2_norm(&v);
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl World {
    pub fn new(cfg: &GenConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(cfg.seed, "env.prototypes", 0);
        let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(cfg.intents);
        for q in 0..cfg.intents {
            let mut placed = false;
            for _ in 0..PROTOTYPE_ATTEMPTS {
                let candidate = unit_gaussian(&mut r, cfg.cue_dim);
                if prototypes.iter().all(|p| dot(p, &candidate) < PROTOTYPE_MAX_DOT) {
                    prototypes.push(candidate);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::config(format!(
                    "could not place intent prototype {q} of {} in {} cue dimensions with pairwise dot < {PROTOTYPE_MAX_DOT}",
                    cfg.intents, cfg.cue_dim
                )));
            }
        }
        let mut r = rng::stream(cfg.seed, "env.probes", 0);
        let probes = (0..cfg.k_ans)
            .map(|_| (0..cfg.scene_dim()).map(|_| r.sample(StandardNormal)).collect())
            .collect();
        Ok(Self { prototypes, probes })
    }

    pub fn prototypes(&self) -> &[Vec<f64>] {
        &self.prototypes
    }

    pub fn probes(&self) -> &[Vec<f64>] {
        &self.probes
    }

    /// Observable answer: argmax of the probes over the scene coordinates.
    pub fn observable_label(&self, visual_raw: &[f64]) -> usize {
        let scene_dim = self.probes[0].len();
        let scores: Vec<f64> = self.probes.iter().map(|p| dot(p, &visual_raw[..scene_dim])).collect();
        argmax(&scores).unwrap_or(0)
    }

    /// Nearest prototype to the cue coordinates of `visual_raw`.
    pub fn decode_intent(&self, visual_raw: &[f64]) -> usize {
        let cue_dim = self.prototypes[0].len();
        let cue = &visual_raw[visual_raw.len() - cue_dim..];
        let neg_dist: Vec<f64> = self
            .prototypes
            .iter()
            .map(|p| -p.iter().zip(cue).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .collect();
        argmax(&neg_dist).unwrap_or(0)
    }
}

/// Generate `cfg.sessions` sessions. Bit-reproducible for a fixed config.
pub fn generate(cfg: &GenConfig) -> Result<Vec<Session>> {
    let world = World::new(cfg)?;
    Ok((0..cfg.sessions as u64)
        .map(|i| generate_session(cfg, &world, i, None))
        .collect())
}

/// One session. Layout, scene features and noise come from streams that do
/// not depend on the intent, so `intent_override` changes only the cue
/// contents and context answers.
pub(crate) fn generate_session(
    cfg: &GenConfig,
    world: &World,
    session_id: u64,
    intent_override: Option<usize>,
) -> Session {
    let drawn = rng::stream(cfg.seed, "env.intent", session_id).random_range(0..cfg.intents);
    let intent = intent_override.unwrap_or(drawn);
    let mut layout = rng::stream(cfg.seed, "env.layout", session_id);
    let mut scene_rng = rng::stream(cfg.seed, "env.scene", session_id);
    let mut noise_rng = rng::stream(cfg.seed, "env.noise", session_id);
    let scene_dim = cfg.scene_dim();
    let scene_scale = 1.0 / (scene_dim as f64).sqrt();

    let steps = (0..cfg.steps)
        .map(|t| {
            // The first step is always an observable, cue-bearing one.
            let context = t > 0 && layout.random_bool(cfg.context_fraction);
            let cue_present = !context && (t == 0 || layout.random_bool(cfg.cue_probability()));
            let offset = layout.random_range(0..cfg.k_ans);

            let mut visual: Vec<f64> = (0..scene_dim)
                .map(|_| scene_scale * scene_rng.sample::<f64, _>(StandardNormal))
                .collect();
            visual.extend(std::iter::repeat_n(0.0, cfg.cue_dim));
            if cue_present {
                visual[scene_dim..].copy_from_slice(&world.prototypes[intent]);
            }
            let mut language = vec![0.0; cfg.d_l];
            if context {
                language[1] = 1.0;
                language[2 + offset] = 1.0;
            } else {
                language[0] = 1.0;
            }
            for x in visual.iter_mut() {
                *x += cfg.noise * noise_rng.sample::<f64, _>(StandardNormal);
            }

            let (kind, label) = if context {
                (QuestionKind::Context, (intent + offset) % cfg.k_ans)
            } else {
                (QuestionKind::Observable, world.observable_label(&visual))
            };
            QAStep {
                session_id,
                step: t,
                kind,
                visual_raw: visual,
                language_raw: language,
                k_ans: cfg.k_ans,
                label,
                cue_present,
                intent_truth: intent,
            }
        })
        .collect();
    Session {
        session_id,
        intent,
        steps,
    }
}

/// Session-level train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Session>,
    pub validation: Vec<Session>,
    pub test: Vec<Session>,
}

/// Shuffle sessions with `seed` and cut them by `ratios` (train, validation,
/// test). Sizes are `round(n·r)` for train and validation, the rest for test.
pub fn split(sessions: Vec<Session>, ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let n = sessions.len();
    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let n_test = n - n_train - n_val;
    for (name, size, ratio) in [
        ("train", n_train, ratios[0]),
        ("validation", n_val, ratios[1]),
        ("test", n_test, ratios[2]),
    ] {
        if ratio > 0.0 && size == 0 {
            return Err(Error::config(format!(
                "{name} partition would be empty ({n} sessions, ratio {ratio})"
            )));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng::stream(seed, "env.split", 0));
    let mut bucket = vec![0u8; n];
    for &i in &order[n_train..n_train + n_val] {
        bucket[i] = 1;
    }
    for &i in &order[n_train + n_val..] {
        bucket[i] = 2;
    }
    let mut out = Split {
        train: Vec::with_capacity(n_train),
        validation: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n_test),
    };
    for (s, b) in sessions.into_iter().zip(bucket) {
        match b {
            0 => out.train.push(s),
            1 => out.validation.push(s),
            _ => out.test.push(s),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
