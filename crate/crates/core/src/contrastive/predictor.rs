use rand::Rng;

use crate::autodiff::{BoundParams, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// MLP head with ReLU between layers and unit-norm output. Query and key
/// copies share parameter names and differ only in the store they bind.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    dims: Vec<usize>,
}

impl Predictor {
    /// `dims` lists the widths from input to output, e.g. `[64, 64, 128]`.
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("predictor widths {dims:?} need two or more positive entries")));
        }
        Ok(Self { dims })
    }

    /// The usual two-layer head `C_f -> C_f -> out`.
    pub fn two_layer(features: usize, out: usize) -> Self {
        Self { dims: vec![features, features, out] }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    fn weight(i: usize) -> String {
        format!("predictor.fc{i}.weight")
    }

    fn bias(i: usize) -> String {
        format!("predictor.fc{i}.bias")
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init_params<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = ParamStore::new();
        for (i, w) in self.dims.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect() };
            p.insert(Self::weight(i), Tensor::from_vec(&[w[0], w[1]], draw(w[0] * w[1])).unwrap());
            p.insert(Self::bias(i), Tensor::from_vec(&[w[1]], draw(w[1])).unwrap());
        }
        p
    }

    /// `(B, C_f)` to unit-norm `(B, out)`.
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, params: &BoundParams, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::ShapeMismatch(format!("predictor expects (B, {}), got {shape:?}", self.input_dim())));
        }
        let mut h = x;
        for i in 0..self.depth() {
            h = g.add(g.matmul(h, params.var(&Self::weight(i))), params.var(&Self::bias(i)));
            if i + 1 < self.depth() {
                h = g.relu(h);
            }
        }
        g.l2_normalize(h)
    }
}
