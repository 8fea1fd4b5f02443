//! The full two-branch network and its training objective.

use std::collections::HashMap;

use rand::Rng;

use super::config::TrainConfig;
use crate::attention::{Mhsam, SoftMask};
use crate::augment::{mix_augment, normal_augment, sample_rng, MixRecord};
use crate::autodiff::{BoundParams, Gradients, Graph, ParamStore, Var};
use crate::contrastive::{info_nce, local_losses, total_loss, LocalLosses, LocalSwitches, LossWeights, Predictor};
use crate::encoder::{batch_input, global_average_pool, Encoder, EncoderConfig, StGcnEncoder};
use crate::error::Result;
use crate::skeleton::{derive_stream, SkeletonSequence, SkeletonTopology, Stream};
use crate::tensor::{Scalar, Tensor};

/// Encoder, attention mask and projection head, plus the loss settings
/// that tie them together. Parameters are held outside, in stores.
#[derive(Clone, Debug)]
pub struct SkeAttn {
    pub encoder: StGcnEncoder,
    pub mhsam: Mhsam,
    pub predictor: Predictor,
    pub weights: LossWeights,
    pub switches: LocalSwitches,
    pub use_local: bool,
    pub mask_momentum_twin: bool,
}

/// Three encoder inputs for one step, each `(B, T, V, M, C)`.
#[derive(Clone, Debug)]
pub struct Views<T: Scalar> {
    pub query: Tensor<T>,
    pub key: Tensor<T>,
    pub mixed: Option<Tensor<T>>,
}

/// Graph handles for every term of one step's objective.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub info: Var,
    pub local: Option<LocalLosses>,
    /// Unit-norm global key embeddings, destined for the bank.
    pub key_embedding: Var,
    pub mask: Option<SoftMask>,
}

impl SkeAttn {
    pub fn new(cfg: &TrainConfig, topology: &SkeletonTopology) -> Result<Self> {
        Self::with_encoder(cfg, StGcnEncoder::new(cfg.encoder.clone(), topology)?)
    }

    pub fn with_encoder(cfg: &TrainConfig, encoder: StGcnEncoder) -> Result<Self> {
        cfg.validate()?;
        let c = encoder.feature_channels();
        let mut dims = vec![c; cfg.predictor_depth];
        dims.push(cfg.feature_dim);
        Ok(Self {
            mhsam: Mhsam::new(c, cfg.heads, cfg.mask_gain)?,
            predictor: Predictor::new(dims)?,
            weights: LossWeights { temperature: cfg.temperature, mu: cfg.mu },
            switches: LocalSwitches { negative_pair: cfg.negative_pair, non_salient: cfg.non_salient },
            use_local: cfg.use_local,
            mask_momentum_twin: cfg.mask_momentum_twin,
            encoder,
        })
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    /// Query-side parameters: encoder, attention mask and head.
    pub fn init_params<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let mut p = self.encoder.init_params(rng);
        p.extend(&self.mhsam.init_params(rng));
        p.extend(&self.predictor.init_params(rng));
        p
    }

    /// The momentum copy starts as an exact copy of the matching query
    /// parameters.
    pub fn key_params<T: Scalar>(&self, query: &ParamStore<T>) -> ParamStore<T> {
        let mut key = query.subset("encoder.");
        key.extend(&query.subset("predictor."));
        if self.mask_momentum_twin {
            key.extend(&query.subset("mhsam."));
        }
        key
    }

    /// `GAP(E(x))`, shape `(B, C_f)`.
    pub fn embed<T: Scalar>(&self, g: &Graph<T>, params: &BoundParams, x: Var) -> Result<Var> {
        Ok(global_average_pool(g, self.encoder.encode(g, params, x)?))
    }

    /// Builds the full loss on `g`. `query` must hold trainable (or
    /// constant, for evaluation) query parameters; `key` and `bank` are
    /// treated as constants.
    pub fn objective<T: Scalar>(
        &self,
        g: &Graph<T>,
        query: &BoundParams,
        key: &BoundParams,
        views: &Views<T>,
        bank: &Tensor<T>,
    ) -> Result<Objective> {
        self.objective_with_bank(g, query, key, views, g.constant(bank))
    }

    /// [`SkeAttn::objective`] with the bank already on the graph.
    pub fn objective_with_bank<T: Scalar>(
        &self,
        g: &Graph<T>,
        query: &BoundParams,
        key: &BoundParams,
        views: &Views<T>,
        bank: Var,
    ) -> Result<Objective> {
        let x_q = g.constant(&views.query);
        let x_k = g.constant(&views.key);

        let f_q = self.encoder.encode(g, query, x_q)?;
        let f_k = g.detach(self.encoder.encode(g, key, x_k)?);
        let z_q = self.predictor.forward(g, query, global_average_pool(g, f_q))?;
        let z_k = g.detach(self.predictor.forward(g, key, global_average_pool(g, f_k))?);
        let info = info_nce(g, z_q, z_k, bank, self.weights.temperature)?;

        let (local, mask) = match (&views.mixed, self.use_local) {
            (Some(x_mix), true) => {
                let f_mix = self.encoder.encode(g, query, g.constant(x_mix))?;
                let mut split = self.mhsam.split_salient(g, query, f_mix, f_k)?;
                if self.mask_momentum_twin {
                    let twin = self.mhsam.split_salient(g, key, f_k, f_k)?;
                    split.key_salient = twin.key_salient;
                    split.key_non_salient = twin.key_non_salient;
                }
                let q_s = self.predictor.forward(g, query, split.salient)?;
                let q_ns = self.predictor.forward(g, query, split.non_salient)?;
                let k_s = g.detach(self.predictor.forward(g, key, split.key_salient)?);
                let k_ns = g.detach(self.predictor.forward(g, key, split.key_non_salient)?);
                let l = local_losses(g, q_s, k_s, q_ns, k_ns, bank, &self.weights, self.switches)?;
                (Some(l), Some(split.mask))
            }
            _ => (None, None),
        };
        let total = total_loss(g, info, local.map(|l| l.local))?;
        Ok(Objective { total, info, local, key_embedding: z_k, mask })
    }
}

/// Gradients of every bound parameter that the loss actually reaches.
pub fn named_grads<T: Scalar>(g: &Graph<T>, bound: &BoundParams, grads: &Gradients<T>) -> HashMap<String, Tensor<T>> {
    bound
        .iter()
        .filter_map(|(name, var)| grads.get(var).map(|_| (name.to_string(), grads.wrt(g, var))))
        .collect()
}

/// Augmented views for one batch. `indices` are dataset positions, used
/// with `epoch` and `seed` to pick each sample's random stream; the mix
/// partner of entry `i` is the query view of entry `(i + 1) % B`.
pub fn make_views<T: Scalar>(
    batch: &[&SkeletonSequence],
    indices: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(Views<T>, Vec<MixRecord>)> {
    let mut queries = Vec::with_capacity(batch.len());
    let mut keys = Vec::with_capacity(batch.len());
    let mut rngs = Vec::with_capacity(batch.len());
    for (seq, &idx) in batch.iter().zip(indices) {
        let mut rng = sample_rng(cfg.seed, epoch as u64, idx as u64);
        let (q, k) = normal_augment(seq, &cfg.augment, &mut rng)?;
        queries.push(q);
        keys.push(k);
        rngs.push(rng);
    }
    let mut mixes = Vec::new();
    let mut records = Vec::new();
    if cfg.use_local {
        let n = queries.len();
        for (i, rng) in rngs.iter_mut().enumerate() {
            let (m, rec) = mix_augment(&queries[i], &queries[(i + 1) % n], &cfg.augment.mix, rng)?;
            mixes.push(m);
            records.push(rec);
        }
    }
    let stack = |seqs: &[SkeletonSequence]| -> Result<Tensor<T>> {
        let derived: Vec<SkeletonSequence> = seqs.iter().map(|s| derive_stream(s, cfg.stream)).collect();
        batch_input(&derived.iter().collect::<Vec<_>>())
    };
    let views = Views {
        query: stack(&queries)?,
        key: stack(&keys)?,
        mixed: if cfg.use_local { Some(stack(&mixes)?) } else { None },
    };
    Ok((views, records))
}

/// Un-augmented encoder input for evaluation.
pub fn plain_input<T: Scalar>(batch: &[&SkeletonSequence], stream: Stream) -> Result<Tensor<T>> {
    let derived: Vec<SkeletonSequence> = batch.iter().map(|s| derive_stream(s, stream)).collect();
    batch_input(&derived.iter().collect::<Vec<_>>())
}
