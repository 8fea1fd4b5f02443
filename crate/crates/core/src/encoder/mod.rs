//! Spatio-temporal graph encoder mapping a batch of clips to feature maps
//! of shape `(B, n, C_f)`.
//!
//! Locations are flattened time-major: `n = T_out * V * M` with index
//! `(t * V + v) * M + m`.

mod stgcn;

pub use stgcn::{EncoderConfig, LayerSpec, StGcnEncoder};

use ndarray::{Array, IxDyn};
use rand::Rng;

use crate::autodiff::{BoundParams, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;
use crate::tensor::{Scalar, Tensor};

/// A differentiable backbone. Parameters live in a [`ParamStore`] so that
/// query and key copies can share one layout.
pub trait Encoder {
    /// Feature width `C_f` of the last layer.
    fn feature_channels(&self) -> usize;

    /// Number of flattened locations `n` for clips of `frames` frames.
    fn locations(&self, frames: usize, persons: usize) -> usize;

    fn init_params<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T>;

    /// Maps `(B, T, V, M, C)` input to `(B, n, C_f)` features.
    fn encode<T: Scalar>(&self, g: &Graph<T>, params: &BoundParams, x: Var) -> Result<Var>;
}

/// Stacks clips into a `(B, T, V, M, C)` tensor.
pub fn batch_input<T: Scalar>(seqs: &[&SkeletonSequence]) -> Result<Tensor<T>> {
    let Some(first) = seqs.first() else {
        return Err(Error::ShapeMismatch("empty batch".into()));
    };
    let (c, t, v, m) = first.dims();
    let mut out = Array::<T, _>::zeros(IxDyn(&[seqs.len(), t, v, m, c]));
    for (b, s) in seqs.iter().enumerate() {
        if s.dims() != (c, t, v, m) {
            return Err(Error::ShapeMismatch(format!(
                "batch entry {b} has shape {:?}, expected {:?}",
                s.dims(),
                (c, t, v, m)
            )));
        }
        for ((ci, ti, vi, mi), &x) in s.coords().indexed_iter() {
            out[[b, ti, vi, mi, ci]] = T::from_f64(x as f64);
        }
    }
    Ok(Tensor::from_array(out))
}

/// Mean over the location axis: `(B, n, C)` to `(B, C)`.
pub fn global_average_pool<T: Scalar>(g: &Graph<T>, f: Var) -> Var {
    g.mean_axis(f, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{synth_generate, SynthConfig};

    #[test]
    fn pooling_examples() {
        let g = Graph::<f64>::new();
        let f = g.constant(&Tensor::from_vec(&[1, 2, 3], vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0]).unwrap());
        assert_eq!(g.tensor(global_average_pool(&g, f)).to_vec(), vec![1.0; 3]);

        let rows = Tensor::from_vec(&[1, 4, 2], [0.3, -1.0].repeat(4)).unwrap();
        let f = g.constant(&rows);
        assert_eq!(g.tensor(global_average_pool(&g, f)).to_vec(), vec![0.3, -1.0]);
    }

    #[test]
    fn pooling_matches_scalar_loop() {
        let mut rng = rand::rng();
        let (b, n, c) = (3, 17, 5);
        let data: Vec<f64> = (0..b * n * c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = Graph::<f64>::new();
        let out = g.tensor(global_average_pool(&g, g.constant(&Tensor::from_vec(&[b, n, c], data.clone()).unwrap())));
        for bi in 0..b {
            for ci in 0..c {
                let mut s = 0.0;
                for ni in 0..n {
                    s += data[(bi * n + ni) * c + ci];
                }
                assert!((out.as_slice()[bi * c + ci] - s / n as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn batch_layout_is_time_joint_person_channel() {
        let ds = synth_generate(&SynthConfig { samples_per_class: 1, ..SynthConfig::default() }, 0).unwrap();
        let seqs: Vec<_> = ds.samples.iter().take(2).collect();
        let x = batch_input::<f64>(&seqs).unwrap();
        assert_eq!(x.shape(), &[2, 16, 9, 1, 3]);
        assert_eq!(x.array()[[1, 5, 4, 0, 2]], ds.samples[1].coords()[[2, 5, 4, 0]] as f64);
    }
}
