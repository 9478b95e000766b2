use crate::{Error, Result};

use super::DenseMatrix;

/// Handle to one matrix inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(format!("adam eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Named trainable matrices with gradient accumulators and adaptive-moment state.
///
/// Values, gradients and both moment buffers are kept in parallel vectors so a
/// backward pass can read values while writing gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<DenseMatrix>,
    grads: Vec<DenseMatrix>,
    first_moments: Vec<DenseMatrix>,
    second_moments: Vec<DenseMatrix>,
    /// Last Adam step applied, 0 before any update.
    step: u64,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            first_moments: Vec::new(),
            second_moments: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix) -> ParamId {
        let (r, c) = value.shape();
        self.names.push(name.into());
        self.values.push(value);
        self.grads.push(DenseMatrix::zeros(r, c));
        self.first_moments.push(DenseMatrix::zeros(r, c));
        self.second_moments.push(DenseMatrix::zeros(r, c));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &DenseMatrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &DenseMatrix {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut DenseMatrix {
        &mut self.grads[id.0]
    }

    pub fn moments(&self, id: ParamId) -> (&DenseMatrix, &DenseMatrix) {
        (&self.first_moments[id.0], &self.second_moments[id.0])
    }

    pub fn values(&self) -> &[DenseMatrix] {
        &self.values
    }

    /// Values for reading alongside gradient buffers for writing.
    pub fn split_mut(&mut self) -> (&[DenseMatrix], &mut [DenseMatrix]) {
        (&self.values, &mut self.grads)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Replace the optimizer state, as when restoring from a checkpoint.
    pub fn restore_moments(
        &mut self,
        id: ParamId,
        first: DenseMatrix,
        second: DenseMatrix,
    ) -> Result<()> {
        let shape = self.values[id.0].shape();
        if first.shape() != shape || second.shape() != shape {
            return Err(Error::shape(
                "ParamSet::restore_moments",
                format!("{shape:?}"),
                format!("{:?} / {:?}", first.shape(), second.shape()),
            ));
        }
        self.first_moments[id.0] = first;
        self.second_moments[id.0] = second;
        Ok(())
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// One bias-corrected adaptive-moment update at step `t` (1-based).
    ///
    /// Every gradient is checked before anything is written, so a NaN leaves
    /// parameters and moments untouched.
    pub fn adam_step(&mut self, cfg: &AdamConfig, t: u64) -> Result<()> {
        cfg.validate()?;
        if t == 0 {
            return Err(Error::config("adam step count starts at 1"));
        }
        for (name, g) in self.names.iter().zip(&self.grads) {
            if !g.all_finite() {
                return Err(Error::numeric(format!("non-finite gradient in {name}")));
            }
        }
        let correction1 = 1.0 - cfg.beta1.powi(t.min(i32::MAX as u64) as i32);
        let correction2 = 1.0 - cfg.beta2.powi(t.min(i32::MAX as u64) as i32);
        for i in 0..self.values.len() {
            let g = self.grads[i].as_slice();
            let m = self.first_moments[i].as_mut_slice();
            let v = self.second_moments[i].as_mut_slice();
            let p = self.values[i].as_mut_slice();
            for j in 0..p.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                p[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        self.step = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(values: &[f64]) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("p", DenseMatrix::column(values.to_vec()).unwrap());
        (ps, id)
    }

    #[test]
    fn every_param_has_matching_grad_buffer() {
        let mut ps = ParamSet::new();
        ps.add("a", DenseMatrix::zeros(3, 2));
        ps.add("b", DenseMatrix::zeros(1, 5));
        for id in ps.ids() {
            assert_eq!(ps.value(id).shape(), ps.grad(id).shape());
        }
    }

    #[test]
    fn zero_grad_leaves_values() {
        let (mut ps, id) = single(&[1.0, 2.0]);
        ps.grad_mut(id).as_mut_slice().copy_from_slice(&[3.0, 4.0]);
        ps.zero_grad();
        assert_eq!(ps.value(id).as_slice(), &[1.0, 2.0]);
        assert_eq!(ps.grad(id).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_keeps_fresh_params() {
        let (mut ps, id) = single(&[1.0, -2.0]);
        ps.adam_step(&AdamConfig::default(), 1).unwrap();
        assert_eq!(ps.value(id).as_slice(), &[1.0, -2.0]);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let cfg = AdamConfig::default();
        let (mut ps, id) = single(&[1.0, -2.0]);
        ps.grad_mut(id).as_mut_slice().copy_from_slice(&[0.5, -0.25]);
        ps.adam_step(&cfg, 1).unwrap();
        let (m0, v0) = (ps.moments(id).0.clone(), ps.moments(id).1.clone());
        ps.zero_grad();
        ps.adam_step(&cfg, 2).unwrap();
        let (m1, v1) = ps.moments(id);
        for j in 0..2 {
            assert_eq!(m1.as_slice()[j], cfg.beta1 * m0.as_slice()[j]);
            assert_eq!(v1.as_slice()[j], cfg.beta2 * v0.as_slice()[j]);
        }
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        let cfg = AdamConfig::default();
        let g = 0.37;
        let (mut ps, id) = single(&[0.0]);
        let mut last = 0.0;
        for t in 1..=2000 {
            ps.grad_mut(id).as_mut_slice()[0] = g;
            ps.adam_step(&cfg, t).unwrap();
            let now = ps.value(id).as_slice()[0];
            if t == 2000 {
                let step = (now - last).abs();
                // Bias-corrected moments of a constant gradient are g and g².
                let limit = cfg.lr * g / (g + cfg.eps);
                assert!((step - limit).abs() < 1e-12, "{step} vs {limit}");
                assert!((step - cfg.lr).abs() / cfg.lr < 1e-6);
            }
            last = now;
        }
    }

    #[test]
    fn nan_gradient_rejected_before_write() {
        let (mut ps, id) = single(&[1.0, 2.0]);
        ps.grad_mut(id).as_mut_slice()[1] = f64::NAN;
        let snapshot = ps.clone();
        assert!(matches!(
            ps.adam_step(&AdamConfig::default(), 1),
            Err(Error::Numeric(_))
        ));
        assert_eq!(ps.value(id), snapshot.value(id));
        assert_eq!(ps.moments(id), snapshot.moments(id));
        assert_eq!(ps.step(), 0);
    }

    #[test]
    fn non_positive_lr_is_config_error() {
        let (mut ps, _) = single(&[1.0]);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(matches!(ps.adam_step(&cfg, 1), Err(Error::Config(_))));
        assert!(matches!(
            ps.adam_step(&AdamConfig::default(), 0),
            Err(Error::Config(_))
        ));
    }
}
