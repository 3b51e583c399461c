use rand::Rng;

use crate::error::{Error, Result};

use super::tape::{Gradients, Tape, Var};
use super::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
}

/// Named tensors in insertion order, each trainable or frozen.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<Param>,
}

/// Tape handles for every entry of a [`ParamSet`], in entry order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, index: usize) -> Var {
        self.vars[index]
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push(Param {
            name,
            tensor,
            frozen: false,
        });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.iter_mut().find(|p| p.name == name)
    }

    pub fn entry(&self, index: usize) -> &Param {
        &self.entries[index]
    }

    pub fn entry_mut(&mut self, index: usize) -> &mut Param {
        &mut self.entries[index]
    }

    /// Total number of scalar values across all entries.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.entries {
            p.frozen = true;
            p.tensor.clear_grad();
        }
    }

    pub fn all_frozen(&self) -> bool {
        self.entries.iter().all(|p| p.frozen)
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.entries {
            p.tensor.clear_grad();
        }
    }

    /// Records every entry on `tape`; frozen entries become constants.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), !p.frozen))
            .collect();
        BoundParams { vars }
    }

    /// Adds the gradients of the bound entries into their buffers. Frozen
    /// entries never receive anything.
    pub fn accumulate(&mut self, bound: &BoundParams, grads: &Gradients) -> Result<()> {
        for (p, &v) in self.entries.iter_mut().zip(&bound.vars) {
            if p.frozen {
                continue;
            }
            match grads.get(v) {
                Some(g) => p.tensor.accumulate_grad(g)?,
                None => p.tensor.accumulate_grad(&vec![0.0; p.tensor.len()])?,
            }
        }
        Ok(())
    }

    /// Multiplies every trainable gradient buffer by `factor`.
    pub fn scale_grads(&mut self, factor: f64) {
        for p in self.entries.iter_mut().filter(|p| !p.frozen) {
            if let Some(g) = p.tensor.take_grad() {
                let scaled = g.into_iter().map(|v| v * factor).collect();
                p.tensor.set_grad(scaled).expect("same length");
            }
        }
    }

    /// Bitwise comparison of values (names, shapes and contents).
    pub fn same_values(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.tensor.shape() == b.tensor.shape()
                    && a.tensor
                        .values()
                        .iter()
                        .zip(b.tensor.values())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// One SGD update with coupled weight decay:
/// `w <- w - lr * (grad + weight_decay * w)` on every trainable entry.
/// Gradient buffers are cleared afterwards. Frozen entries are left untouched.
pub fn sgd_step(params: &mut ParamSet, lr: f64, weight_decay: f64) -> Result<()> {
    if let Some(p) = params
        .entries
        .iter()
        .find(|p| !p.frozen && p.tensor.grad().is_none())
    {
        return Err(Error::State(format!(
            "trainable parameter {:?} has no gradient",
            p.name
        )));
    }
    for p in &mut params.entries {
        let Some(grad) = p.tensor.take_grad() else {
            continue;
        };
        if p.frozen {
            continue;
        }
        for (w, g) in p.tensor.values_mut().iter_mut().zip(grad) {
            *w -= lr * (g + weight_decay * *w);
        }
        if !p.tensor.all_finite() {
            return Err(Error::Numeric(format!("parameter {:?} diverged", p.name)));
        }
    }
    Ok(())
}

/// Uniform `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len = shape.iter().product();
    let values = (0..len).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::new(shape.to_vec(), values).expect("length matches shape")
}
