use ndarray::Array2;
use rand::Rng;

use super::Encoder;
use crate::autodiff::{unfold_out_len, BoundParams, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonTopology;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub temporal_kernel: usize,
    /// Learn a per-edge multiplier on the adjacency in every layer.
    pub edge_importance: bool,
}

impl EncoderConfig {
    /// Three blocks, 3 -> 16 -> 32 -> 64, halving time in the second.
    pub fn desk() -> Self {
        let l = |channels, stride| LayerSpec { channels, stride };
        Self { in_channels: 3, layers: vec![l(16, 1), l(32, 2), l(64, 1)], temporal_kernel: 5, edge_importance: true }
    }

    /// Ten blocks in the usual ST-GCN widths, ending at 256 channels.
    pub fn ntu() -> Self {
        let l = |channels, stride| LayerSpec { channels, stride };
        Self {
            in_channels: 3,
            layers: vec![
                l(64, 1),
                l(64, 1),
                l(64, 1),
                l(64, 1),
                l(128, 2),
                l(128, 1),
                l(128, 1),
                l(256, 2),
                l(256, 1),
                l(256, 1),
            ],
            temporal_kernel: 9,
            edge_importance: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "ntu" => Ok(Self::ntu()),
            other => Err(Error::InvalidConfig(format!("unknown encoder preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.in_channels == 0 {
            return Err(Error::InvalidConfig("encoder needs input channels and at least one layer".into()));
        }
        if self.temporal_kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("temporal kernel {} must be odd", self.temporal_kernel)));
        }
        if self.layers.iter().any(|l| l.channels == 0 || l.stride == 0) {
            return Err(Error::InvalidConfig("layer channels and strides must be positive".into()));
        }
        Ok(())
    }
}

/// Graph-convolution blocks: per layer, aggregate joints with the
/// edge-weighted adjacency, mix channels, convolve along time, then ReLU.
/// No biases, so zero input maps to zero features.
#[derive(Clone, Debug)]
pub struct StGcnEncoder {
    config: EncoderConfig,
    adjacency: Array2<f64>,
}

impl StGcnEncoder {
    pub fn new(config: EncoderConfig, topology: &SkeletonTopology) -> Result<Self> {
        Self::with_adjacency(config, topology.normalized_adjacency())
    }

    /// Uses a caller-provided `V x V` aggregation matrix.
    pub fn with_adjacency(config: EncoderConfig, adjacency: Array2<f64>) -> Result<Self> {
        config.validate()?;
        if adjacency.nrows() != adjacency.ncols() || adjacency.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!("adjacency must be square, got {:?}", adjacency.dim())));
        }
        Ok(Self { config, adjacency })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn joint_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.config.layers.len())
            .flat_map(|i| [spatial_name(i), importance_name(i), temporal_name(i)])
            .filter(|n| self.config.edge_importance || !n.ends_with("edge_importance"))
            .collect()
    }

    fn adjacency_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_array(self.adjacency.mapv(T::from_f64).into_dyn())
    }
}

fn spatial_name(i: usize) -> String {
    format!("encoder.layer{i}.spatial")
}

fn importance_name(i: usize) -> String {
    format!("encoder.layer{i}.edge_importance")
}

fn temporal_name(i: usize) -> String {
    format!("encoder.layer{i}.temporal")
}

fn uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

impl Encoder for StGcnEncoder {
    fn feature_channels(&self) -> usize {
        self.config.layers.last().map(|l| l.channels).unwrap_or(self.config.in_channels)
    }

    fn locations(&self, frames: usize, persons: usize) -> usize {
        let k = self.config.temporal_kernel;
        let t = self.config.layers.iter().fold(frames, |t, l| unfold_out_len(t, k, l.stride, k / 2));
        t * self.joint_count() * persons
    }

    /// Uniform fan-in scaling: the spatial map keeps variance, the temporal
    /// map doubles it to offset the ReLU that follows.
    fn init_params<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = ParamStore::new();
        let v = self.joint_count();
        let k = self.config.temporal_kernel;
        let mut c_in = self.config.in_channels;
        for (i, layer) in self.config.layers.iter().enumerate() {
            let c = layer.channels;
            p.insert(spatial_name(i), uniform(rng, &[c_in, c], (3.0 / c_in as f64).sqrt()));
            if self.config.edge_importance {
                p.insert(importance_name(i), Tensor::ones(&[v, v]));
            }
            p.insert(temporal_name(i), uniform(rng, &[k * c, c], (6.0 / (k * c) as f64).sqrt()));
            c_in = c;
        }
        p
    }

    fn encode<T: Scalar>(&self, g: &Graph<T>, params: &BoundParams, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        let &[b, t, v, m, c] = shape.as_slice() else {
            return Err(Error::ShapeMismatch(format!("encoder input must be (B, T, V, M, C), got {shape:?}")));
        };
        if v != self.joint_count() || c != self.config.in_channels || t == 0 || b == 0 || m == 0 {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects (B, T, {}, M, {}) with nonzero extents, got {shape:?}",
                self.joint_count(),
                self.config.in_channels
            )));
        }
        let adjacency = g.constant(&self.adjacency_tensor::<T>());
        let k = self.config.temporal_kernel;
        let (mut h, mut t, mut c_in) = (x, t, c);
        for (i, layer) in self.config.layers.iter().enumerate() {
            let c_out = layer.channels;
            // joints to the front so the adjacency acts as a left matmul
            let a_w = match self.config.edge_importance {
                true => g.mul(adjacency, params.var(&importance_name(i))),
                false => adjacency,
            };
            let front = g.permute(h, &[2, 0, 1, 3, 4]);
            let front = g.reshape(front, &[v, b * t * m * c_in]);
            let mixed = g.matmul(a_w, front);
            let mixed = g.reshape(mixed, &[v, b, t, m, c_in]);
            let back = g.permute(mixed, &[1, 2, 0, 3, 4]);
            let rows = g.reshape(back, &[b * t * v * m, c_in]);
            let spatial = g.matmul(rows, params.var(&spatial_name(i)));

            let seq = g.reshape(spatial, &[b, t, v * m, c_out]);
            let pad = k / 2;
            let t_out = unfold_out_len(t, k, layer.stride, pad);
            let taps = g.temporal_unfold(seq, k, layer.stride, pad);
            let taps = g.reshape(taps, &[b * t_out * v * m, k * c_out]);
            let conv = g.matmul(taps, params.var(&temporal_name(i)));
            h = g.reshape(g.relu(conv), &[b, t_out, v, m, c_out]);
            t = t_out;
            c_in = c_out;
        }
        Ok(g.reshape(h, &[b, t * v * m, c_in]))
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{Array, IxDyn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{finite_difference_check, Coverage, FdOptions, LeafKind};
    use crate::encoder::{batch_input, global_average_pool};
    use crate::skeleton::{synth_generate, SynthConfig};

    fn desk() -> StGcnEncoder {
        StGcnEncoder::new(EncoderConfig::desk(), &SkeletonTopology::desk9()).unwrap()
    }

    fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        uniform(&mut rng, shape, 1.0)
    }

    #[test]
    fn desk_shapes() {
        let enc = desk();
        assert_eq!(enc.locations(16, 1), 72);
        assert_eq!(enc.feature_channels(), 64);
        let ds = synth_generate(&SynthConfig { samples_per_class: 1, ..SynthConfig::default() }, 0).unwrap();
        let seqs: Vec<_> = ds.samples.iter().collect();
        let g = Graph::<f32>::new();
        let p = enc.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0)).bind(&g, LeafKind::Frozen);
        let x = g.constant(&batch_input(&seqs).unwrap());
        let f = enc.encode(&g, &p, x).unwrap();
        assert_eq!(g.shape(f), vec![4, 72, 64]);
    }

    #[test]
    fn adjacency_rows_are_normalised() {
        for s in desk().adjacency().rows().into_iter().map(|r| r.sum()) {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let enc = desk();
        let g = Graph::<f64>::new();
        let p = enc.init_params::<f64, _>(&mut ChaCha8Rng::seed_from_u64(1)).bind(&g, LeafKind::Frozen);
        let f = enc.encode(&g, &p, g.constant(&Tensor::zeros(&[2, 16, 9, 1, 3]))).unwrap();
        assert!(g.tensor(f).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_is_a_reshape() {
        let cfg = EncoderConfig { in_channels: 3, layers: vec![LayerSpec { channels: 3, stride: 1 }], temporal_kernel: 5, edge_importance: true };
        let enc = StGcnEncoder::with_adjacency(cfg, Array2::eye(4)).unwrap();
        let mut p = ParamStore::<f64>::new();
        p.insert("encoder.layer0.spatial", Tensor::from_array(Array2::<f64>::eye(3).into_dyn()));
        p.insert("encoder.layer0.edge_importance", Tensor::ones(&[4, 4]));
        let mut delta = Array::<f64, _>::zeros(IxDyn(&[15, 3]));
        for c in 0..3 {
            delta[[2 * 3 + c, c]] = 1.0;
        }
        p.insert("encoder.layer0.temporal", Tensor::from_array(delta));
        let x = random_input(&[2, 6, 4, 2, 3], 3);
        let x = Tensor::from_array(x.array().mapv(f64::abs));
        let g = Graph::<f64>::new();
        let f = enc.encode(&g, &p.bind(&g, LeafKind::Constant), g.constant(&x)).unwrap();
        assert_eq!(g.shape(f), vec![2, 6 * 4 * 2, 3]);
        assert_eq!(g.tensor(f).as_slice(), x.as_slice());
    }

    #[test]
    fn wrong_joint_count_is_rejected() {
        let enc = desk();
        let g = Graph::<f64>::new();
        let p = enc.init_params::<f64, _>(&mut ChaCha8Rng::seed_from_u64(1)).bind(&g, LeafKind::Frozen);
        let x = g.constant(&Tensor::zeros(&[1, 16, 25, 1, 3]));
        assert!(matches!(enc.encode(&g, &p, x), Err(Error::ShapeMismatch(_))));
        let x = g.constant(&Tensor::zeros(&[16, 9, 1, 3]));
        assert!(matches!(enc.encode(&g, &p, x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn batch_permutation_equivariance() {
        let enc = desk();
        let params = enc.init_params::<f64, _>(&mut ChaCha8Rng::seed_from_u64(2));
        let x = random_input(&[3, 16, 9, 1, 3], 4);
        let run = |x: &Tensor<f64>| {
            let g = Graph::<f64>::new();
            let f = enc.encode(&g, &params.bind(&g, LeafKind::Constant), g.constant(x)).unwrap();
            g.tensor(f)
        };
        let out = run(&x);
        let perm = [2usize, 0, 1];
        let swapped = Tensor::from_array(x.array().select(ndarray::Axis(0), &perm));
        let out_swapped = run(&swapped);
        let expected = out.array().select(ndarray::Axis(0), &perm);
        assert_eq!(out_swapped.array(), &expected);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = EncoderConfig {
            in_channels: 3,
            layers: vec![LayerSpec { channels: 4, stride: 1 }, LayerSpec { channels: 5, stride: 2 }],
            temporal_kernel: 5,
            edge_importance: true,
        };
        let enc = StGcnEncoder::new(cfg, &SkeletonTopology::desk9()).unwrap();
        let params = enc.init_params::<f64, _>(&mut ChaCha8Rng::seed_from_u64(5));
        let x = random_input(&[2, 6, 9, 1, 3], 6);
        let target = random_input(&[2, 5], 7);
        let opts = FdOptions { coverage: Coverage::Sampled { per_tensor: 12, seed: 1 }, ..FdOptions::default() };
        finite_difference_check(
            |g, p| {
                let f = enc.encode(g, p, g.constant(&x))?;
                let pooled = global_average_pool(g, f);
                let diff = g.sub(pooled, g.constant(&target));
                Ok(g.sum(g.mul(diff, diff)))
            },
            &params,
            &opts,
        )
        .unwrap();
    }
}
