//! The plain-text run configuration: `key = value` lines, `#` comments.
//!
//! Every key has a default; unknown keys are rejected. [`RunConfig::to_text`]
//! renders the fully resolved configuration in a fixed key order, which is
//! what commands echo into their artifacts.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::env::GenConfig;
use crate::eval::{AnswerSource, EvalConfig};
use crate::model::{Activation, ModelConfig};
use crate::training::{BankScope, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub gen: GenConfig,
    /// Train / validation / test session ratios applied by `gen-data`.
    pub split: [f64; 3],
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            gen: GenConfig::default(),
            split: [1.0, 0.0, 0.0],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        };
        c.propagate();
        c
    }
}

/// Every recognized key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "intents",
    "steps",
    "sessions",
    "noise",
    "context_fraction",
    "cue_fraction",
    "cue_dim",
    "split",
    "d_v",
    "d_l",
    "d_zv",
    "d_zl",
    "d_c",
    "d_h",
    "k_ans",
    "retrieval_k",
    "temperature",
    "activation",
    "share_heads",
    "epochs",
    "belief",
    "freeze_backbone",
    "bank_scope",
    "bank_capacity",
    "eval_interval",
    "clip",
    "ppo_epochs",
    "minibatch",
    "rollout_batch",
    "w_ce",
    "w_ppo",
    "w_value",
    "entropy_coef",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "inference",
    "answer_head",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    /// Copy shared fields (seed, dimensions, scopes) into the sub-configs.
    fn propagate(&mut self) {
        self.gen.seed = self.seed;
        self.train.ppo.seed = self.seed;
        self.eval.seed = self.seed;
        self.gen.k_ans = self.model.k_ans;
        self.gen.d_v = self.model.d_v;
        self.gen.d_l = self.model.d_l;
        self.eval.bank_scope = self.train.bank_scope;
        self.eval.bank_capacity = self.train.bank_capacity;
        self.eval.use_belief = self.train.use_belief;
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "intents" => self.gen.intents = parse(key, v)?,
            "steps" => self.gen.steps = parse(key, v)?,
            "sessions" => self.gen.sessions = parse(key, v)?,
            "noise" => self.gen.noise = parse(key, v)?,
            "context_fraction" => self.gen.context_fraction = parse(key, v)?,
            "cue_fraction" => self.gen.cue_fraction = parse(key, v)?,
            "cue_dim" => self.gen.cue_dim = parse(key, v)?,
            "split" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(Error::config(format!("split: expected three comma-separated ratios, got {v:?}")));
                }
                for (slot, p) in self.split.iter_mut().zip(parts) {
                    *slot = parse(key, p)?;
                }
            }
            "d_v" => self.model.d_v = parse(key, v)?,
            "d_l" => self.model.d_l = parse(key, v)?,
            "d_zv" => self.model.d_zv = parse(key, v)?,
            "d_zl" => self.model.d_zl = parse(key, v)?,
            "d_c" => self.model.d_c = parse(key, v)?,
            "d_h" => self.model.d_h = parse(key, v)?,
            "k_ans" => self.model.k_ans = parse(key, v)?,
            "retrieval_k" => self.model.retrieval.k = parse(key, v)?,
            "temperature" => self.model.retrieval.temperature = parse(key, v)?,
            "activation" => self.model.backbone_activation = Activation::parse(v)?,
            "share_heads" => self.model.share_heads = parse_bool(key, v)?,
            "epochs" => self.train.passes = parse(key, v)?,
            "belief" => self.train.use_belief = parse_bool(key, v)?,
            "freeze_backbone" => self.train.freeze_backbone = parse_bool(key, v)?,
            "bank_scope" => self.train.bank_scope = BankScope::parse(v)?,
            "bank_capacity" => self.train.bank_capacity = parse(key, v)?,
            "eval_interval" => {
                self.train.eval_interval = if v == "epoch" { None } else { Some(parse(key, v)?) }
            }
            "clip" => self.train.ppo.clip = parse(key, v)?,
            "ppo_epochs" => self.train.ppo.epochs = parse(key, v)?,
            "minibatch" => self.train.ppo.minibatch = parse(key, v)?,
            "rollout_batch" => self.train.ppo.rollout_batch = parse(key, v)?,
            "w_ce" => self.train.ppo.w_ce = parse(key, v)?,
            "w_ppo" => self.train.ppo.w_ppo = parse(key, v)?,
            "w_value" => self.train.ppo.w_value = parse(key, v)?,
            "entropy_coef" => self.train.ppo.entropy_coef = parse(key, v)?,
            "lr" => self.train.ppo.adam.lr = parse(key, v)?,
            "beta1" => self.train.ppo.adam.beta1 = parse(key, v)?,
            "beta2" => self.train.ppo.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.train.ppo.adam.eps = parse(key, v)?,
            "inference" => {
                self.eval.greedy = match v {
                    "greedy" => true,
                    "sampled" => false,
                    _ => return Err(Error::config(format!("inference: expected greedy or sampled, got {v:?}"))),
                }
            }
            "answer_head" => self.eval.source = AnswerSource::parse(v)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        self.propagate();
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "intents" => self.gen.intents.to_string(),
            "steps" => self.gen.steps.to_string(),
            "sessions" => self.gen.sessions.to_string(),
            "noise" => self.gen.noise.to_string(),
            "context_fraction" => self.gen.context_fraction.to_string(),
            "cue_fraction" => self.gen.cue_fraction.to_string(),
            "cue_dim" => self.gen.cue_dim.to_string(),
            "split" => format!("{}, {}, {}", self.split[0], self.split[1], self.split[2]),
            "d_v" => self.model.d_v.to_string(),
            "d_l" => self.model.d_l.to_string(),
            "d_zv" => self.model.d_zv.to_string(),
            "d_zl" => self.model.d_zl.to_string(),
            "d_c" => self.model.d_c.to_string(),
            "d_h" => self.model.d_h.to_string(),
            "k_ans" => self.model.k_ans.to_string(),
            "retrieval_k" => self.model.retrieval.k.to_string(),
            "temperature" => self.model.retrieval.temperature.to_string(),
            "activation" => self.model.backbone_activation.name().to_string(),
            "share_heads" => self.model.share_heads.to_string(),
            "epochs" => self.train.passes.to_string(),
            "belief" => self.train.use_belief.to_string(),
            "freeze_backbone" => self.train.freeze_backbone.to_string(),
            "bank_scope" => self.train.bank_scope.name().to_string(),
            "bank_capacity" => self.train.bank_capacity.to_string(),
            "eval_interval" => match self.train.eval_interval {
                None => "epoch".to_string(),
                Some(n) => n.to_string(),
            },
            "clip" => self.train.ppo.clip.to_string(),
            "ppo_epochs" => self.train.ppo.epochs.to_string(),
            "minibatch" => self.train.ppo.minibatch.to_string(),
            "rollout_batch" => self.train.ppo.rollout_batch.to_string(),
            "w_ce" => self.train.ppo.w_ce.to_string(),
            "w_ppo" => self.train.ppo.w_ppo.to_string(),
            "w_value" => self.train.ppo.w_value.to_string(),
            "entropy_coef" => self.train.ppo.entropy_coef.to_string(),
            "lr" => self.train.ppo.adam.lr.to_string(),
            "beta1" => self.train.ppo.adam.beta1.to_string(),
            "beta2" => self.train.ppo.adam.beta2.to_string(),
            "adam_eps" => self.train.ppo.adam.eps.to_string(),
            "inference" => if self.eval.greedy { "greedy" } else { "sampled" }.to_string(),
            "answer_head" => self.eval.source.name().to_string(),
            _ => return None,
        })
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// All keys with their resolved values, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    /// Resolved values keyed by name, in echo order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|k| (*k, self.get(k).expect("listed key"))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.model.validate()?;
        self.train.validate()
    }
}
