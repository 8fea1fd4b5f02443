use rand::seq::index::sample;
use rand::Rng;

use super::{MixConfig, SwapMode};
use crate::error::{Error, Result};
use crate::skeleton::SkeletonSequence;

/// What one call to [`mix_augment`] swapped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixRecord {
    /// Indices into the topology's part groups, ascending.
    pub groups: Vec<usize>,
    pub start: usize,
    pub len: usize,
}

impl std::fmt::Display for MixRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "groups={:?} frames={}..{}", self.groups, self.start, self.start + self.len)
    }
}

/// Inclusive bounds for the swapped segment length: `T / temporal_u` and
/// `T / temporal_l`, each rounded to the nearest frame and clamped to `[1, T]`.
pub fn mix_length_range(frames: usize, temporal_l: usize, temporal_u: usize) -> (usize, usize) {
    let round = |d: usize| ((frames as f64 / d as f64).round() as usize).clamp(1, frames.max(1));
    let lo = round(temporal_u);
    let hi = round(temporal_l).max(lo);
    (lo, hi)
}

fn check_partner(x: &SkeletonSequence, partner: &SkeletonSequence) -> Result<()> {
    if x.topology().as_ref() != partner.topology().as_ref() {
        return Err(Error::PartGroupMismatch(format!(
            "topology `{}` vs partner `{}`",
            x.topology().name(),
            partner.topology().name()
        )));
    }
    if x.dims() != partner.dims() {
        return Err(Error::PartGroupMismatch(format!("shape {:?} vs partner {:?}", x.dims(), partner.dims())));
    }
    Ok(())
}

/// Replaces the joints of the listed part groups inside frames
/// `start..start + len` with the partner's.
pub fn mix_augment_at(x: &SkeletonSequence, partner: &SkeletonSequence, record: &MixRecord) -> Result<SkeletonSequence> {
    check_partner(x, partner)?;
    let parts = x.topology().parts();
    if let Some(&g) = record.groups.iter().find(|&&g| g >= parts.len()) {
        return Err(Error::PartGroupMismatch(format!("group {g} but topology has {}", parts.len())));
    }
    if record.start + record.len > x.frames() {
        return Err(Error::OutOfRange(format!(
            "segment {}..{} past {} frames",
            record.start,
            record.start + record.len,
            x.frames()
        )));
    }
    let mut out = x.coords().clone();
    let src = partner.coords();
    let (c, _, _, m) = out.dim();
    for &g in &record.groups {
        for &v in &parts[g].joints {
            for t in record.start..record.start + record.len {
                for ci in 0..c {
                    for mi in 0..m {
                        out[[ci, t, v, mi]] = src[[ci, t, v, mi]];
                    }
                }
            }
        }
    }
    Ok(x.with_coords(out))
}

/// Semantic part mixing: swaps a random set of part groups over one random
/// contiguous segment from `partner` into `x`.
pub fn mix_augment<R: Rng>(
    x: &SkeletonSequence,
    partner: &SkeletonSequence,
    cfg: &MixConfig,
    rng: &mut R,
) -> Result<(SkeletonSequence, MixRecord)> {
    check_partner(x, partner)?;
    let SwapMode::Swap = cfg.swap_mode;
    let group_count = x.topology().parts().len();
    if cfg.spatial_l > cfg.spatial_u || cfg.spatial_u > group_count {
        return Err(Error::PartGroupMismatch(format!(
            "cannot pick {}..={} of {group_count} part groups",
            cfg.spatial_l, cfg.spatial_u
        )));
    }
    let p = rng.random_range(cfg.spatial_l..=cfg.spatial_u);
    let mut groups = sample(rng, group_count, p).into_vec();
    groups.sort_unstable();
    let t = x.frames();
    let (lo, hi) = mix_length_range(t, cfg.temporal_l, cfg.temporal_u);
    let len = rng.random_range(lo..=hi);
    let start = rng.random_range(0..=t - len);
    let record = MixRecord { groups, start, len };
    Ok((mix_augment_at(x, partner, &record)?, record))
}
