use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Named parameters in insertion order, with the Adam state that belongs to them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    moments: Vec<Moments>,
    index: HashMap<String, usize>,
    step: u64,
}

/// Adam hyperparameters. `weight_decay` is an L2 coefficient added to the
/// gradient before the moment updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        if !value.all_finite() {
            return Err(Error::Contract(format!("parameter `{name}` is not finite")));
        }
        let n = value.numel();
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.moments.push(Moments {
            first: vec![0.0; n],
            second: vec![0.0; n],
        });
        Ok(())
    }

    /// Inserts a `rows x cols` matrix drawn uniformly from `[-scale, scale]`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    /// Mutable access to a parameter's values; the shape is fixed.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let i = *self.index.get(name)?;
        Some(self.values[i].data_mut())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of Adam steps taken.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// One Adam update with bias correction.
    ///
    /// `grads` must name each parameter once; parameters without an entry are
    /// treated as having zero gradient. Fails before touching any state if a
    /// gradient is non-finite or misshapen.
    pub fn adam_step(&mut self, grads: &[(String, Tensor)], cfg: &AdamConfig) -> Result<()> {
        let mut slots: Vec<Option<&Tensor>> = vec![None; self.names.len()];
        for (name, g) in grads {
            let &i = self
                .index
                .get(name)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
            if g.numel() != self.values[i].numel() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: self.values[i].shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::Training(format!("non-finite gradient for `{name}`")));
            }
            slots[i] = Some(g);
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, slot) in slots.into_iter().enumerate() {
            let value = self.values[i].data_mut();
            let Moments { first, second } = &mut self.moments[i];
            for k in 0..value.len() {
                let mut g = slot.map_or(0.0, |g| g.data()[k]);
                g += cfg.weight_decay * value[k];
                first[k] = cfg.beta1 * first[k] + (1.0 - cfg.beta1) * g;
                second[k] = cfg.beta2 * second[k] + (1.0 - cfg.beta2) * g * g;
                let m_hat = first[k] / bc1;
                let v_hat = second[k] / bc2;
                value[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }

    /// Copy of the parameter values without optimizer state.
    pub fn snapshot(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, value) in self.iter() {
            out.insert(name, value.clone()).expect("unique names");
        }
        out
    }
}
