//! Invariant gates: each runs a randomized suite and reports pass/fail.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::memory::{cosine_similarity, MemoryBank, RetrievalConfig};
use crate::model::{Activation, Model, ModelConfig, TrunkFlow};
use crate::numerics::{grad_check, l2_norm, softmax, Differentiable, ParamSet};
use crate::training::{synthetic_batch, total_loss, BatchLoss, PPOConfig};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Retrieval,
    Belief,
    Softmax,
    Gradient,
    Ppo,
    Persistence,
}

impl Gate {
    pub const ALL: [Gate; 6] = [
        Gate::Retrieval,
        Gate::Belief,
        Gate::Softmax,
        Gate::Gradient,
        Gate::Ppo,
        Gate::Persistence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Gate::Retrieval => "retrieval",
            Gate::Belief => "belief",
            Gate::Softmax => "softmax",
            Gate::Gradient => "gradient",
            Gate::Ppo => "ppo",
            Gate::Persistence => "persistence",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Gate::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::config(format!("unknown gate {s:?}")))
    }
}

/// Deliberate defects for exercising the gates themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negate every analytic gradient the gradient gate sees.
    FlipGradientSign,
}

impl Fault {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flip-gradient-sign" => Ok(Fault::FlipGradientSign),
            other => Err(Error::config(format!("unknown fault {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub gate: Gate,
    pub passed: bool,
    pub cases: usize,
    pub detail: String,
    pub seconds: f64,
}

pub fn run_gates(gates: &[Gate], seed: u64, fault: Option<Fault>) -> Vec<GateReport> {
    gates.iter().map(|&g| run_gate(g, seed, fault)).collect()
}

pub fn run_gate(gate: Gate, seed: u64, fault: Option<Fault>) -> GateReport {
    let start = Instant::now();
    let outcome = match gate {
        Gate::Retrieval => retrieval(seed),
        Gate::Belief => belief(seed),
        Gate::Softmax => softmax_gate(seed),
        Gate::Gradient => gradient(seed, fault),
        Gate::Ppo => ppo(seed),
        Gate::Persistence => persistence(seed),
    };
    let (passed, cases, detail) = match outcome {
        Ok((cases, None)) => (true, cases, "ok".to_string()),
        Ok((cases, Some(why))) => (false, cases, why),
        Err(e) => (false, 0, format!("error: {e}")),
    };
    GateReport {
        gate,
        passed,
        cases,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Cases run and the first failure, if any.
type Outcome = Result<(usize, Option<String>)>;

fn gaussian(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

/// A bank of `n` random entries; about one key in eight repeats an earlier one
/// so tie ordering is exercised.
fn random_bank(r: &mut impl Rng, n: usize, d_z: usize, d_c: usize) -> Result<MemoryBank> {
    let mut bank = MemoryBank::new(d_z, d_c, n.max(1), 0)?;
    let mut keys: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let key = if !keys.is_empty() && r.random_bool(0.125) {
            keys[r.random_range(0..keys.len())].clone()
        } else {
            gaussian(r, d_z)
        };
        let value = gaussian(r, d_c);
        bank.insert(&key, &value, r.random_range(0..4), r.random_range(0..2) as f64)?;
        keys.push(key);
    }
    Ok(bank)
}

fn retrieval(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, "verify.retrieval", 0);
    let cases = 100;
    for case in 0..cases {
        let n = r.random_range(1..=1000);
        let d_z = r.random_range(1..=64);
        let k = r.random_range(1..=20);
        let bank = random_bank(&mut r, n, d_z, 3)?;
        let query = if r.random_bool(0.2) {
            bank.entries().nth(r.random_range(0..n)).unwrap().key.iter().map(|&x| x as f64).collect()
        } else {
            gaussian(&mut r, d_z)
        };
        let got = bank.retrieve_topk(&query, k)?;
        let mut scan: Vec<(f64, u64)> = bank
            .entries()
            .map(|e| {
                let key: Vec<f64> = e.key.iter().map(|&x| x as f64).collect();
                (cosine_similarity(&key, &query), e.insert_index)
            })
            .collect();
        scan.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scan.truncate(k);
        let want: Vec<u64> = scan.iter().map(|s| s.1).collect();
        if got.indices != want {
            return Ok((case + 1, Some(format!("case {case}: indices {:?} != scan {:?}", got.indices, want))));
        }
        for (s, (w, _)) in got.similarities.iter().zip(&scan) {
            if (s - w).abs() > 1e-12 {
                return Ok((case + 1, Some(format!("case {case}: similarity {s} vs scan {w}"))));
            }
        }
    }
    Ok((cases, None))
}

fn belief(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, "verify.belief", 0);
    let cases = 1000;
    for case in 0..cases {
        let n = r.random_range(1..=50);
        let d_z = r.random_range(1..=16);
        let d_c = r.random_range(1..=8);
        let bank = random_bank(&mut r, n, d_z, d_c)?;
        let cfg = RetrievalConfig {
            k: r.random_range(1..=8),
            temperature: r.random_range(0.05..5.0),
        };
        let res = bank.retrieve(&gaussian(&mut r, d_z), &cfg)?;
        let b = bank.aggregate_belief(&res)?;
        if res.weights.iter().any(|&w| w < 0.0) {
            return Ok((case + 1, Some(format!("case {case}: negative weight in {:?}", res.weights))));
        }
        let sum: f64 = res.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Ok((case + 1, Some(format!("case {case}: weights sum to {sum}"))));
        }
        for j in 0..d_c {
            let coords: Vec<f64> = res.indices.iter().map(|&i| bank.get(i).unwrap().value[j] as f64).collect();
            let lo = coords.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
            if b.values[j] < lo - slack || b.values[j] > hi + slack {
                return Ok((case + 1, Some(format!("case {case}: b[{j}] = {} outside [{lo}, {hi}]", b.values[j]))));
            }
        }
    }
    Ok((cases, None))
}

fn softmax_gate(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, "verify.softmax", 0);
    let cases = 1000;
    let model = Model::new(ModelConfig::default(), seed, seed)?;
    for case in 0..cases {
        let n = r.random_range(1..=32);
        let scale = r.random_range(0.1..100.0);
        let v: Vec<f64> = gaussian(&mut r, n).into_iter().map(|x| x * scale).collect();
        let p = softmax(&v)?;
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || p.iter().any(|&x| x < 0.0) {
            return Ok((case + 1, Some(format!("case {case}: softmax sums to {sum}"))));
        }
        let shift = r.random_range(-50.0..50.0);
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let q = softmax(&shifted)?;
        if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Ok((case + 1, Some(format!("case {case}: softmax not shift invariant"))));
        }
        let cfg = model.config();
        let obs = crate::model::Observation {
            visual_raw: gaussian(&mut r, cfg.d_v),
            language_raw: gaussian(&mut r, cfg.d_l),
            candidate_count: cfg.k_ans,
        };
        let z = model.embed(&obs)?;
        let norm = l2_norm(&z.values);
        if (norm - 1.0).abs() > 1e-12 {
            return Ok((case + 1, Some(format!("case {case}: embedding norm {norm}"))));
        }
    }
    Ok((cases, None))
}

fn small_model_config(activation: Activation, share_heads: bool) -> ModelConfig {
    ModelConfig {
        d_v: 6,
        d_l: 4,
        d_zv: 3,
        d_zl: 3,
        d_c: 3,
        d_h: 5,
        k_ans: 3,
        retrieval: RetrievalConfig {
            k: 3,
            temperature: 0.5,
        },
        backbone_activation: activation,
        share_heads,
    }
}

struct Faulty<'a>(BatchLoss<'a>);

impl Differentiable for Faulty<'_> {
    fn loss(&self, params: &ParamSet) -> Result<f64> {
        self.0.loss(params)
    }

    fn loss_and_grad(&self, params: &mut ParamSet) -> Result<f64> {
        let l = self.0.loss_and_grad(params)?;
        for id in params.ids().collect::<Vec<_>>() {
            for g in params.grad_mut(id).as_mut_slice() {
                *g = -*g;
            }
        }
        Ok(l)
    }
}

/// The three loss weightings the gradient gate covers.
pub fn weightings() -> [(&'static str, PPOConfig); 3] {
    let base = PPOConfig::default();
    [
        (
            "ce-only",
            PPOConfig {
                w_ppo: 0.0,
                w_value: 0.0,
                entropy_coef: 0.0,
                ..base.clone()
            },
        ),
        (
            "ppo-only",
            PPOConfig {
                w_ce: 0.0,
                w_value: 0.0,
                entropy_coef: 0.0,
                ..base.clone()
            },
        ),
        ("combined", base),
    ]
}

fn gradient(seed: u64, fault: Option<Fault>) -> Outcome {
    let mut cases = 0;
    for (i, (name, ppo)) in weightings().iter().enumerate() {
        for (j, (activation, share)) in [(Activation::Tanh, false), (Activation::Identity, true)].into_iter().enumerate() {
            let cfg = small_model_config(activation, share);
            let case_seed = seed.wrapping_add((i * 2 + j) as u64);
            let mut model = Model::new(cfg.clone(), case_seed, case_seed)?;
            let records = synthetic_batch(&model, 12, case_seed, 0.15)?;
            let f = BatchLoss {
                model_cfg: &cfg,
                records: &records,
                ppo,
                flow: TrunkFlow::All,
            };
            let mut r = rng::stream(case_seed, "verify.gradient", 0);
            let report = match fault {
                Some(Fault::FlipGradientSign) => grad_check(&Faulty(f), model.params_mut(), 10, 1e-5, &mut r)?,
                None => grad_check(&f, model.params_mut(), 10, 1e-5, &mut r)?,
            };
            cases += report.probes.len();
            if report.max_relative_error >= 1e-4 {
                let w = report.worst().unwrap();
                return Ok((
                    cases,
                    Some(format!(
                        "{name}/{}: {}[{}] analytic {:.6e} vs numeric {:.6e} (relative error {:.3e})",
                        activation.name(),
                        model.params().name(w.param),
                        w.index,
                        w.analytic,
                        w.numeric,
                        w.relative_error
                    )),
                ));
            }
        }
    }
    Ok((cases, None))
}

fn ppo(seed: u64) -> Outcome {
    let cfg = small_model_config(Activation::Tanh, false);
    let mut model = Model::new(cfg.clone(), seed, seed)?;
    let records = synthetic_batch(&model, 64, seed, 0.0)?;
    let ppo = &weightings()[1].1;
    let l = total_loss(&cfg, model.params_mut(), &records, ppo, TrunkFlow::All)?;
    let mean_adv = records.iter().map(|r| r.advantage).sum::<f64>() / records.len() as f64;
    if (l.ppo_objective - mean_adv).abs() > 1e-12 {
        return Ok((1, Some(format!("surrogate {} != mean advantage {mean_adv}", l.ppo_objective))));
    }
    for rec in &records {
        let s = crate::training::ppo_surrogate(rec.old_log_prob, rec.old_log_prob, rec.advantage, ppo.clip)?;
        if s != rec.advantage {
            return Ok((1, Some(format!("surrogate at ratio 1 is {s}, advantage {}", rec.advantage))));
        }
    }
    Ok((records.len(), None))
}

fn persistence(seed: u64) -> Outcome {
    let mut r = rng::stream(seed, "verify.persistence", 0);
    let cases = 50;
    for case in 0..cases {
        let n = r.random_range(0..200);
        let d_z = r.random_range(1..=40);
        let d_c = r.random_range(1..=20);
        let bank = random_bank(&mut r, n, d_z, d_c)?;
        let bytes = bank.to_bytes();
        let back = MemoryBank::from_bytes(&bytes)?;
        if back.to_bytes() != bytes || !back.entries().eq(bank.entries()) {
            return Ok((case + 1, Some(format!("case {case}: bank round trip differs"))));
        }

        let cfg = ModelConfig {
            d_h: r.random_range(1..=12),
            d_c,
            ..small_model_config(Activation::Tanh, r.random_bool(0.5))
        };
        let mut model = Model::new(cfg.clone(), r.random(), r.random())?;
        // a few optimizer steps so the moments are nonzero
        for t in 1..=3 {
            let params = model.params_mut();
            for id in params.ids().collect::<Vec<_>>() {
                for g in params.grad_mut(id).as_mut_slice() {
                    *g = r.sample(StandardNormal);
                }
            }
            params.adam_step(&Default::default(), t)?;
        }
        let bytes = model.to_checkpoint_bytes();
        let back = Model::from_checkpoint_bytes(&bytes, cfg)?;
        let same = back.to_checkpoint_bytes() == bytes
            && back.params().values() == model.params().values()
            && back.projection() == model.projection()
            && model.params().ids().all(|id| back.params().moments(id) == model.params().moments(id));
        if !same {
            return Ok((case + 1, Some(format!("case {case}: checkpoint round trip differs"))));
        }
    }
    Ok((cases, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_gates_pass() {
        for report in run_gates(&Gate::ALL, 1, None) {
            assert!(report.passed, "{report:?}");
            assert!(report.cases > 0);
        }
    }

    #[test]
    fn flipped_gradient_fails_gradient_gate() {
        let report = run_gate(Gate::Gradient, 1, Some(Fault::FlipGradientSign));
        assert!(!report.passed);
        assert!(report.detail.contains("relative error"), "{}", report.detail);
    }

    #[test]
    fn gate_names_round_trip() {
        for g in Gate::ALL {
            assert_eq!(Gate::parse(g.name()).unwrap(), g);
        }
        assert!(Gate::parse("nope").is_err());
    }
}
