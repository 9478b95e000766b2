use rand::Rng;

use crate::{Error, Result};

use super::{ParamId, ParamSet};

/// A scalar loss over a [`ParamSet`] with an analytic gradient.
pub trait Differentiable {
    fn loss(&self, params: &ParamSet) -> Result<f64>;

    /// Loss at `params`; gradient accumulators are overwritten with `∂loss/∂params`.
    fn loss_and_grad(&self, params: &mut ParamSet) -> Result<f64>;
}

/// Gradients smaller than this in magnitude are compared on an absolute scale.
const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-6)`; zero when both are exactly zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

/// Compare the analytic gradient of `f` with central finite differences
/// `(f(p+h) - f(p-h)) / 2h` at `probes_per_param` random coordinates of every
/// parameter matrix. Parameters are restored exactly afterwards.
pub fn grad_check<F, R>(
    f: &F,
    params: &mut ParamSet,
    probes_per_param: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Differentiable + ?Sized,
    R: Rng + ?Sized,
{
    if !(step > 0.0) {
        return Err(Error::config(format!("finite-difference step must be > 0, got {step}")));
    }
    let base = f.loss_and_grad(params)?;
    if !base.is_finite() {
        return Err(Error::numeric(format!("loss is {base}")));
    }
    let ids: Vec<ParamId> = params.ids().collect();
    let mut probes = Vec::with_capacity(ids.len() * probes_per_param);
    for id in ids {
        let n = params.value(id).len();
        if n == 0 {
            continue;
        }
        for _ in 0..probes_per_param {
            let index = rng.random_range(0..n);
            let analytic = params.grad(id).as_slice()[index];
            let original = params.value(id).as_slice()[index];

            params.value_mut(id).as_mut_slice()[index] = original + step;
            let plus = f.loss(params);
            params.value_mut(id).as_mut_slice()[index] = original - step;
            let minus = f.loss(params);
            params.value_mut(id).as_mut_slice()[index] = original;

            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::numeric(format!(
                    "loss became non-finite probing {}[{index}]",
                    params.name(id)
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            probes.push(Probe {
                param: id,
                index,
                analytic,
                numeric,
                relative_error: relative_error(analytic, numeric),
            });
        }
    }
    let max_relative_error = probes.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        probes,
        max_relative_error,
    })
}
