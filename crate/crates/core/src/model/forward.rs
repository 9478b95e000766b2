//! Forward pass with cached intermediates and the matching hand-written backward pass.

use crate::memory::{cosine_parts, pool_into, similarity_weights};
use crate::numerics::{affine_forward, dot, l2_norm, DenseMatrix};
use crate::{Error, Result};

use super::{
    norm_or_error, HeadsOutput, ModelConfig, Observation, StepContext, BB0_B, BB0_W, BB1_B, BB1_W,
    CE_B, CE_W, ENC_LANG_B, ENC_LANG_W, ENC_VIS_B, ENC_VIS_W, POL_B, POL_W, VAL_B, VAL_W,
};

pub(crate) struct EmbedCache {
    u_v: Vec<f64>,
    u_l: Vec<f64>,
    norm: f64,
}

pub(crate) fn embed_parts(
    cfg: &ModelConfig,
    values: &[DenseMatrix],
    obs: &Observation,
) -> Result<(Vec<f64>, EmbedCache)> {
    let tanh = |v: Vec<f64>| v.into_iter().map(f64::tanh).collect::<Vec<_>>();
    let u_v = tanh(affine_forward(
        &obs.visual_raw,
        &values[ENC_VIS_W.0],
        values[ENC_VIS_B.0].as_slice(),
    )?);
    let u_l = tanh(affine_forward(
        &obs.language_raw,
        &values[ENC_LANG_W.0],
        values[ENC_LANG_B.0].as_slice(),
    )?);
    let mut r = Vec::with_capacity(cfg.d_z());
    r.extend_from_slice(&u_v);
    r.extend_from_slice(&u_l);
    let norm = norm_or_error("embed (zero joint embedding)", &r)?;
    let z = r.into_iter().map(|x| x / norm).collect();
    Ok((z, EmbedCache { u_v, u_l, norm }))
}

/// Two activation layers over `x = [z; b]`; returns `(h, h1)`.
pub(crate) fn backbone(
    cfg: &ModelConfig,
    values: &[DenseMatrix],
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let act = cfg.backbone_activation;
    let h1: Vec<f64> = affine_forward(x, &values[BB0_W.0], values[BB0_B.0].as_slice())?
        .into_iter()
        .map(|v| act.apply(v))
        .collect();
    let h: Vec<f64> = affine_forward(&h1, &values[BB1_W.0], values[BB1_B.0].as_slice())?
        .into_iter()
        .map(|v| act.apply(v))
        .collect();
    Ok((h, h1))
}

pub(crate) fn heads(cfg: &ModelConfig, values: &[DenseMatrix], h: &[f64]) -> Result<HeadsOutput> {
    let ce_logits = affine_forward(h, &values[CE_W.0], values[CE_B.0].as_slice())?;
    let policy_logits = if cfg.share_heads {
        ce_logits.clone()
    } else {
        affine_forward(h, &values[POL_W.0], values[POL_B.0].as_slice())?
    };
    let value = affine_forward(h, &values[VAL_W.0], values[VAL_B.0].as_slice())?[0];
    Ok(HeadsOutput {
        ce_logits,
        policy_logits,
        value,
    })
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub z: Vec<f64>,
    pub similarities: Vec<f64>,
    pub weights: Vec<f64>,
    pub belief: Vec<f64>,
    pub h: Vec<f64>,
    pub heads: HeadsOutput,
    use_belief: bool,
    visual: Vec<f64>,
    language: Vec<f64>,
    u_v: Vec<f64>,
    u_l: Vec<f64>,
    embed_norm: f64,
    x: Vec<f64>,
    h1: Vec<f64>,
}

/// Forward pass for one step against a frozen retrieval context.
///
/// With `use_belief == false`, or an empty context, the belief is the zero vector.
pub fn forward_step(
    cfg: &ModelConfig,
    values: &[DenseMatrix],
    obs: &Observation,
    ctx: &StepContext,
    use_belief: bool,
) -> Result<StepCache> {
    let (z, ec) = embed_parts(cfg, values, obs)?;
    let mut belief = vec![0.0; cfg.d_c];
    let (mut similarities, mut weights) = (Vec::new(), Vec::new());
    if use_belief && !ctx.is_empty() {
        let z_norm = l2_norm(&z);
        similarities = ctx
            .keys
            .iter()
            .map(|k| cosine_parts(dot(k, &z), l2_norm(k), z_norm))
            .collect();
        weights = similarity_weights(&similarities, cfg.retrieval.temperature)?;
        for (w, c) in weights.iter().zip(&ctx.payloads) {
            if c.len() != cfg.d_c {
                return Err(Error::shape("belief payload", cfg.d_c, c.len()));
            }
            pool_into(&mut belief, *w, c.iter().copied());
        }
    }
    let mut x = Vec::with_capacity(cfg.d_z() + cfg.d_c);
    x.extend_from_slice(&z);
    x.extend_from_slice(&belief);
    let (h, h1) = backbone(cfg, values, &x)?;
    let heads = heads(cfg, values, &h)?;
    Ok(StepCache {
        z,
        similarities,
        weights,
        belief,
        h,
        heads,
        use_belief,
        visual: obs.visual_raw.clone(),
        language: obs.language_raw.clone(),
        u_v: ec.u_v,
        u_l: ec.u_l,
        embed_norm: ec.norm,
        x,
        h1,
    })
}

/// Loss gradients with respect to the three head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub ce_logits: Vec<f64>,
    pub policy_logits: Vec<f64>,
    pub value: f64,
}

impl HeadGrads {
    pub fn zeros(k_ans: usize) -> Self {
        Self {
            ce_logits: vec![0.0; k_ans],
            policy_logits: vec![0.0; k_ans],
            value: 0.0,
        }
    }
}

/// Which head gradients continue into the backbone and encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrunkFlow {
    /// Every head trains the shared trunk.
    All,
    /// Only the answer head trains the trunk; policy and value heads train themselves.
    AnswerHeadOnly,
}

fn accumulate_affine(
    grads: &mut [DenseMatrix],
    w: super::ParamId,
    b: super::ParamId,
    g_out: &[f64],
    input: &[f64],
) {
    grads[w.0].add_outer(1.0, g_out, input);
    grads[b.0].add_scaled(1.0, g_out);
}

/// Accumulate parameter gradients for one step into `grads`.
///
/// Stored keys and payloads are constants; the belief gradient reaches the
/// encoders only through the query side of the similarities.
pub fn backward_step(
    cfg: &ModelConfig,
    values: &[DenseMatrix],
    grads: &mut [DenseMatrix],
    ctx: &StepContext,
    cache: &StepCache,
    g: &HeadGrads,
    flow: TrunkFlow,
) -> Result<()> {
    let h = &cache.h;
    // Heads.
    accumulate_affine(grads, CE_W, CE_B, &g.ce_logits, h);
    let mut g_h = values[CE_W.0].matvec_transposed(&g.ce_logits)?;
    let g_h_policy = if cfg.share_heads {
        accumulate_affine(grads, CE_W, CE_B, &g.policy_logits, h);
        values[CE_W.0].matvec_transposed(&g.policy_logits)?
    } else {
        accumulate_affine(grads, POL_W, POL_B, &g.policy_logits, h);
        values[POL_W.0].matvec_transposed(&g.policy_logits)?
    };
    accumulate_affine(grads, VAL_W, VAL_B, &[g.value], h);
    if flow == TrunkFlow::All {
        for (i, gh) in g_h.iter_mut().enumerate() {
            *gh += g_h_policy[i] + g.value * values[VAL_W.0].as_slice()[i];
        }
    }

    // Backbone.
    let act = cfg.backbone_activation;
    let g_p2: Vec<f64> = g_h
        .iter()
        .zip(h)
        .map(|(gh, &y)| gh * act.derivative_from_output(y))
        .collect();
    accumulate_affine(grads, BB1_W, BB1_B, &g_p2, &cache.h1);
    let g_h1 = values[BB1_W.0].matvec_transposed(&g_p2)?;
    let g_p1: Vec<f64> = g_h1
        .iter()
        .zip(&cache.h1)
        .map(|(gh, &y)| gh * act.derivative_from_output(y))
        .collect();
    accumulate_affine(grads, BB0_W, BB0_B, &g_p1, &cache.x);
    let g_x = values[BB0_W.0].matvec_transposed(&g_p1)?;
    let d_z = cfg.d_z();
    let mut g_z = g_x[..d_z].to_vec();
    let g_b = &g_x[d_z..];

    // Belief pooling → softmax weights → cosine similarities → query.
    if cache.use_belief && !ctx.is_empty() {
        let g_w: Vec<f64> = ctx.payloads.iter().map(|c| dot(c, g_b)).collect();
        let mean: f64 = cache.weights.iter().zip(&g_w).map(|(w, gw)| w * gw).sum();
        let z = &cache.z;
        let z_norm = l2_norm(z);
        for (j, key) in ctx.keys.iter().enumerate() {
            let s = cache.similarities[j];
            if s.abs() >= 1.0 {
                // Clamped similarity.
                continue;
            }
            let g_s = cache.weights[j] * (g_w[j] - mean) / cfg.retrieval.temperature;
            let key_norm = l2_norm(key);
            let a = g_s / (key_norm * z_norm);
            let bz = g_s * s / (z_norm * z_norm);
            for i in 0..d_z {
                g_z[i] += a * key[i] - bz * z[i];
            }
        }
    }

    // Normalization z = r / ‖r‖.
    let zg = dot(&cache.z, &g_z);
    let g_r: Vec<f64> = g_z
        .iter()
        .zip(&cache.z)
        .map(|(gz, z)| (gz - z * zg) / cache.embed_norm)
        .collect();

    // Encoders.
    let (g_rv, g_rl) = g_r.split_at(cfg.d_zv);
    let g_av: Vec<f64> = g_rv
        .iter()
        .zip(&cache.u_v)
        .map(|(g, u)| g * (1.0 - u * u))
        .collect();
    let g_al: Vec<f64> = g_rl
        .iter()
        .zip(&cache.u_l)
        .map(|(g, u)| g * (1.0 - u * u))
        .collect();
    accumulate_affine(grads, ENC_VIS_W, ENC_VIS_B, &g_av, &cache.visual);
    accumulate_affine(grads, ENC_LANG_W, ENC_LANG_B, &g_al, &cache.language);
    Ok(())
}
