//! View generation: shear + temporal crop for the two global views, and
//! semantic part mixing for the local branch.

mod crop;
mod mix;
mod shear;

pub use crop::{resize_time, temporal_crop_pad, temporal_crop_pad_at};
pub use mix::{mix_augment, mix_augment_at, mix_length_range, MixRecord};
pub use shear::{random_shear_matrix, shear, shear_with_matrix};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwapMode {
    Swap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpatialMode {
    Semantic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixConfig {
    pub spatial_l: usize,
    pub spatial_u: usize,
    pub temporal_l: usize,
    pub temporal_u: usize,
    pub swap_mode: SwapMode,
    pub spatial_mode: SpatialMode,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            spatial_l: 3,
            spatial_u: 4,
            temporal_l: 4,
            temporal_u: 7,
            swap_mode: SwapMode::Swap,
            spatial_mode: SpatialMode::Semantic,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub shear_amplitude: f64,
    /// The clip is reflection-padded by `T / temporal_padding_ratio` frames
    /// on each side; 0 disables padding.
    pub temporal_padding_ratio: usize,
    pub window_size: usize,
    pub mix: MixConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { shear_amplitude: 0.5, temporal_padding_ratio: 6, window_size: 16, mix: MixConfig::default() }
    }
}

impl AugmentConfig {
    pub fn validate(&self, part_groups: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("augment: {m}")));
        if !(self.shear_amplitude >= 0.0) {
            return bad(format!("shear_amplitude {} must be >= 0", self.shear_amplitude));
        }
        if self.window_size == 0 {
            return bad("window_size must be positive".into());
        }
        let m = &self.mix;
        if m.spatial_l > m.spatial_u || m.spatial_u > part_groups {
            return bad(format!(
                "need spatial_l <= spatial_u <= {part_groups}, got {} and {}",
                m.spatial_l, m.spatial_u
            ));
        }
        if m.temporal_l == 0 || m.temporal_l > m.temporal_u {
            return bad(format!("need 0 < temporal_l <= temporal_u, got {} and {}", m.temporal_l, m.temporal_u));
        }
        Ok(())
    }
}

/// Generator for one sample's augmentations in one epoch; identical
/// `(seed, epoch, index)` always yields the same stream.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Two independent shear + crop draws from the same clip.
pub fn normal_augment(
    seq: &SkeletonSequence,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(SkeletonSequence, SkeletonSequence)> {
    let view = |rng: &mut ChaCha8Rng| -> Result<SkeletonSequence> {
        let sheared = shear(seq, cfg.shear_amplitude, rng);
        temporal_crop_pad(&sheared, cfg.temporal_padding_ratio, cfg.window_size, rng)
    };
    let q = view(rng)?;
    let k = view(rng)?;
    Ok((q, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{synth_generate, SynthConfig};

    fn clip() -> SkeletonSequence {
        let cfg = SynthConfig { samples_per_class: 1, frames: 20, ..SynthConfig::default() };
        synth_generate(&cfg, 2).unwrap().samples.remove(0)
    }

    #[test]
    fn views_differ_and_have_window_frames() {
        let cfg = AugmentConfig::default();
        let (q, k) = normal_augment(&clip(), &cfg, &mut sample_rng(1, 0, 0)).unwrap();
        assert_eq!(q.dims(), (3, 16, 9, 1));
        assert_eq!(k.dims(), (3, 16, 9, 1));
        assert_ne!(q, k);
    }

    #[test]
    fn seeded_pair_is_reproducible() {
        let cfg = AugmentConfig::default();
        let a = normal_augment(&clip(), &cfg, &mut sample_rng(7, 3, 11)).unwrap();
        let b = normal_augment(&clip(), &cfg, &mut sample_rng(7, 3, 11)).unwrap();
        assert_eq!(a, b);
        let c = normal_augment(&clip(), &cfg, &mut sample_rng(7, 4, 11)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate(5).is_ok());
        let mut cfg = AugmentConfig::default();
        cfg.mix.spatial_u = 6;
        assert!(cfg.validate(5).is_err());
        let cfg = AugmentConfig { shear_amplitude: -0.1, ..AugmentConfig::default() };
        assert!(cfg.validate(5).is_err());
    }
}
