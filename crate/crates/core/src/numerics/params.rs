//! Named trainable parameters with gradient slots and Adam moments.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    m: Tensor,
    v: Tensor,
}

impl Param {
    /// Learning-rate group: the name prefix up to the first dot.
    pub fn group(&self) -> &str {
        self.name.split('.').next().unwrap_or("")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradients computed by one backward pass, keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) entries: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(ParamId, Tensor)> {
        self.entries.iter()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.params.len());
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.clone(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    /// Adds a `[fan_in, fan_out]` weight drawn from N(0, gain²/fan_in).
    pub fn add_weight<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let std = gain / (fan_in as f64).sqrt();
        self.add_normal(name, &[fan_in, fan_out], std, rng)
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn add_constant(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        t.fill(value);
        self.add(name, t)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds `grads` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.entries {
            self.params[id.0].grad.add_assign(g);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.scale_assign(factor);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// One Adam update with a single learning rate for every parameter.
    pub fn adam_step(&mut self, lr: f64, cfg: AdamConfig) -> Result<()> {
        self.adam_step_grouped(|_| lr, cfg)
    }

    /// One Adam update with bias correction; `lr_for` maps a parameter group
    /// to its learning rate. Gradients are left in place.
    pub fn adam_step_grouped(&mut self, lr_for: impl Fn(&str) -> f64, cfg: AdamConfig) -> Result<()> {
        let lrs: Vec<f64> = self.params.iter().map(|p| lr_for(p.group())).collect();
        if let Some(bad) = lrs.iter().find(|lr| !(**lr > 0.0) || !lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {bad}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (p, lr) in self.params.iter_mut().zip(lrs) {
            let g = p.grad.data();
            let m = p.m.data_mut();
            for (m, g) in m.iter_mut().zip(g) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            }
            let v = p.v.data_mut();
            for (v, g) in v.iter_mut().zip(g) {
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            }
            let (m, v) = (p.m.data(), p.v.data());
            for ((x, m), v) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = m / c1;
                let v_hat = v / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Copies values from `other` for every parameter name they share.
    /// Shapes must agree.
    pub fn load_values(&mut self, entries: &[(String, Tensor)]) -> Result<usize> {
        let mut loaded = 0;
        for (name, t) in entries {
            let Some(id) = self.id(name) else { continue };
            let p = &mut self.params[id.0];
            if p.value.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "{name}: checkpoint shape {:?} does not match parameter shape {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
            loaded += 1;
        }
        Ok(loaded)
    }

    pub fn named_values(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }
}
