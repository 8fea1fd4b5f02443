use std::collections::HashMap;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{lit, Scalar, Tensor};

/// Stochastic gradient descent with heavy-ball momentum and L2 weight
/// decay folded into the gradient:
///
/// ```text
/// d = g + wd * p
/// v = momentum * v + d        (v = d on the first step)
/// p = p - lr * (nesterov ? d + momentum * v : v)
/// ```
#[derive(Clone, Debug)]
pub struct Sgd<T: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    velocity: HashMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64, nesterov: bool) -> Self {
        Self { momentum, weight_decay, nesterov, velocity: HashMap::new() }
    }

    /// Per-parameter momentum buffers, keyed by parameter name.
    pub fn velocity(&self) -> &HashMap<String, Tensor<T>> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, name: impl Into<String>, v: Tensor<T>) {
        self.velocity.insert(name.into(), v);
    }

    /// Updates every parameter that has an entry in `grads`; parameters
    /// without one are left alone, as are their velocities.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &HashMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        let (mom, wd, lr) = (lit::<T>(self.momentum), lit::<T>(self.weight_decay), lit::<T>(lr));
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let Some(g) = grads.get(&name) else { continue };
            let p = params.get_mut(&name).unwrap();
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch(format!("gradient for `{name}` is {:?}, parameter is {:?}", g.shape(), p.shape())));
            }
            let d = p.array() * wd + g.array();
            let v = match self.velocity.remove(&name) {
                Some(v) if self.momentum != 0.0 => v.into_array() * mom + &d,
                _ => d.clone(),
            };
            let update = if self.nesterov { &d + &(&v * mom) } else { v.clone() };
            *p = Tensor::from_array(p.array() - &(update * lr));
            self.velocity.insert(name, Tensor::from_array(v));
        }
        Ok(())
    }
}
