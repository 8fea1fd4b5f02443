//! Multi-head self-attention mask over feature locations, its complement,
//! and masked pooling into salient / non-salient vectors.

use rand::Rng;

use crate::autodiff::{BoundParams, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::{lit, Scalar, Tensor};

pub const W_QUERY: &str = "mhsam.w_q";
pub const W_KEY: &str = "mhsam.w_k";
pub const W_VALUE: &str = "mhsam.w_v";
pub const PROJ: &str = "mhsam.proj";

/// Shape and gain of the attention mask module.
#[derive(Clone, Debug, PartialEq)]
pub struct Mhsam {
    channels: usize,
    heads: usize,
    gain: f64,
}

impl Mhsam {
    pub fn new(channels: usize, heads: usize, gain: f64) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::HeadDivisibility { channels, heads });
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::InvalidConfig(format!("mask gain must be positive, got {gain}")));
        }
        Ok(Self { channels, heads, gain })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn head_width(&self) -> usize {
        self.channels / self.heads
    }

    /// All four matrices uniform in `±1/sqrt(C)`, which keeps the initial
    /// mask close to 0.5.
    pub fn init_params<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let c = self.channels;
        let bound = 1.0 / (c as f64).sqrt();
        let mut p = ParamStore::new();
        for name in [W_QUERY, W_KEY, W_VALUE, PROJ] {
            let data = (0..c * c).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
            p.insert(name, Tensor::from_vec(&[c, c], data).expect("square matrix"));
        }
        p
    }

    fn check_features<T: Scalar>(&self, g: &Graph<T>, f: Var) -> Result<(usize, usize)> {
        match g.shape(f).as_slice() {
            &[b, n, c] if c == self.channels && n > 0 && b > 0 => Ok((b, n)),
            s => Err(Error::ShapeMismatch(format!("attention input must be (B, n, {}), got {s:?}", self.channels))),
        }
    }

    /// Soft salient mask `(B, n, C)` with every entry in the open interval
    /// (0, 1).
    pub fn compute_mask<T: Scalar>(&self, g: &Graph<T>, params: &BoundParams, f: Var) -> Result<SoftMask> {
        let (b, n) = self.check_features(g, f)?;
        let (c, h, d) = (self.channels, self.heads, self.head_width());
        let rows = g.reshape(f, &[b * n, c]);
        let split = |w: &str| {
            let x = g.matmul(rows, params.var(w));
            let x = g.reshape(x, &[b, n, h, d]);
            let x = g.permute(x, &[0, 2, 1, 3]);
            g.reshape(x, &[b * h, n, d])
        };
        let (q, k, v) = (split(W_QUERY), split(W_KEY), split(W_VALUE));
        let scores = g.scale(g.matmul(q, g.transpose(k)), lit(1.0 / (d as f64).sqrt()));
        let attended = g.matmul(g.softmax(scores), v);
        let attended = g.reshape(attended, &[b, h, n, d]);
        let attended = g.permute(attended, &[0, 2, 1, 3]);
        let attended = g.reshape(attended, &[b * n, c]);
        let logits = g.scale(g.matmul(attended, params.var(PROJ)), lit(self.gain));
        Ok(SoftMask::new(g.reshape(g.sigmoid(logits), &[b, n, c])))
    }

    /// Computes one mask from `f_query` and pools both feature maps with it
    /// and with its complement. The key side is detached.
    pub fn split_salient<T: Scalar>(
        &self,
        g: &Graph<T>,
        params: &BoundParams,
        f_query: Var,
        f_key: Var,
    ) -> Result<SalientSplit> {
        if g.shape(f_query) != g.shape(f_key) {
            return Err(Error::ShapeMismatch(format!(
                "query features {:?} vs key features {:?}",
                g.shape(f_query),
                g.shape(f_key)
            )));
        }
        let mask = self.compute_mask(g, params, f_query)?;
        let f_key = g.detach(f_key);
        let key_mask = mask.detach(g);
        Ok(SalientSplit {
            mask,
            salient: mask_pool(g, f_query, mask)?,
            non_salient: mask_pool(g, f_query, mask.complement())?,
            key_salient: mask_pool(g, f_key, key_mask)?,
            key_non_salient: mask_pool(g, f_key, key_mask.complement())?,
        })
    }
}

/// Handles produced by [`Mhsam::split_salient`]; every pooled vector is
/// `(B, C)`.
#[derive(Clone, Copy, Debug)]
pub struct SalientSplit {
    pub mask: SoftMask,
    pub salient: Var,
    pub non_salient: Var,
    pub key_salient: Var,
    pub key_non_salient: Var,
}

/// A sigmoid mask or its complement. The complement is kept symbolic so
/// that complementing twice gives back the original node exactly; it is
/// only turned into `1 - m` when used.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SoftMask {
    base: Var,
    complemented: bool,
}

impl SoftMask {
    pub fn new(base: Var) -> Self {
        Self { base, complemented: false }
    }

    pub fn base(self) -> Var {
        self.base
    }

    pub fn is_complement(self) -> bool {
        self.complemented
    }

    pub fn complement(self) -> Self {
        Self { base: self.base, complemented: !self.complemented }
    }

    pub fn detach<T: Scalar>(self, g: &Graph<T>) -> Self {
        Self { base: g.detach(self.base), complemented: self.complemented }
    }

    /// The mask values as a graph node.
    pub fn values<T: Scalar>(self, g: &Graph<T>) -> Var {
        if self.complemented {
            g.one_minus(self.base)
        } else {
            self.base
        }
    }
}

pub fn complement(mask: SoftMask) -> SoftMask {
    mask.complement()
}

/// `sum_n f * m / n`: the masked sum divided by the location count, not
/// by the mask mass.
pub fn mask_pool<T: Scalar>(g: &Graph<T>, f: Var, mask: SoftMask) -> Result<Var> {
    let (fs, ms) = (g.shape(f), g.shape(mask.base));
    if fs != ms || fs.len() != 3 {
        return Err(Error::ShapeMismatch(format!("features {fs:?} vs mask {ms:?}")));
    }
    Ok(g.mean_axis(g.mul(f, mask.values(g)), 1))
}
