//! Synthetic labelled action clips for desk-scale experiments.
//!
//! Every class is a periodic swing of one limb group about its attachment
//! joint; classes differ only in which limb moves and how fast. On top of
//! that each clip carries nuisance motion that is shared by all classes:
//! random swings of the other limbs, a global drift, a random body yaw,
//! and additive jitter. All nuisance terms scale with `noise`, so
//! `noise = 0` yields one fixed template per class.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::sequence::{Dataset, SkeletonSequence, Split};
use super::topology::SkeletonTopology;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub frames: usize,
    pub topology: String,
    /// Global multiplier on every random nuisance term.
    pub noise: f64,
    /// Peak swing angle of the class-defining limb, radians.
    pub swing_amplitude: f64,
    /// Peak swing angle of the non-class limbs, radians (before `noise`).
    pub distractor_amplitude: f64,
    /// Peak whole-body translation over the clip (before `noise`).
    pub drift: f64,
    /// Peak body yaw, radians (before `noise`).
    pub yaw: f64,
    /// Standard deviation of per-coordinate jitter (before `noise`).
    pub jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_count: 4,
            samples_per_class: 200,
            frames: 16,
            topology: "desk9".into(),
            noise: 1.0,
            swing_amplitude: 0.9,
            distractor_amplitude: 0.5,
            drift: 0.05,
            yaw: 0.1,
            jitter: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<SkeletonTopology> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synth: {m}")));
        if self.class_count < 2 {
            return bad("class_count must be at least 2");
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive");
        }
        if self.frames < 2 {
            return bad("frames must be at least 2");
        }
        if !(self.noise >= 0.0) || !(self.jitter >= 0.0) {
            return bad("noise and jitter must be non-negative");
        }
        let topo = SkeletonTopology::preset(&self.topology)?;
        if limb_groups(&topo).is_empty() {
            return bad("topology has no limb groups to animate");
        }
        Ok(topo)
    }
}

/// Part groups other than the one containing the center joint.
fn limb_groups(topo: &SkeletonTopology) -> Vec<usize> {
    (0..topo.parts().len()).filter(|&g| !topo.parts()[g].joints.contains(&topo.center())).collect()
}

fn rest_pose(topo: &SkeletonTopology) -> Vec<[f64; 3]> {
    match topo.name() {
        "desk9" => vec![
            [0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0],
            [0.0, 0.8, 0.0],
            [-0.3, 0.45, 0.0],
            [-0.55, 0.3, 0.0],
            [0.3, 0.45, 0.0],
            [0.55, 0.3, 0.0],
            [-0.15, -0.8, 0.0],
            [0.15, -0.8, 0.0],
        ],
        _ => {
            // generic layout: spread children of each joint below/beside it
            let v = topo.joint_count();
            let mut pose = vec![[0.0; 3]; v];
            let mut order = vec![topo.center()];
            let mut i = 0;
            while i < order.len() {
                let p = order[i];
                let children: Vec<usize> =
                    topo.edges().iter().filter(|e| e.0 == p).map(|e| e.1).collect();
                let n = children.len() as f64;
                for (k, &c) in children.iter().enumerate() {
                    let angle = -PI / 2.0 + (k as f64 - (n - 1.0) / 2.0) * 0.9;
                    pose[c] = [pose[p][0] + 0.2 * angle.cos(), pose[p][1] + 0.2 * angle.sin(), 0.0];
                    order.push(c);
                }
                i += 1;
            }
            pose
        }
    }
}

/// Rotates every joint of `group` about `pivot` in the x-y plane.
fn swing(pose: &mut [[f64; 3]], joints: &[usize], pivot: [f64; 3], angle: f64) {
    let (s, c) = angle.sin_cos();
    for &j in joints {
        let dx = pose[j][0] - pivot[0];
        let dy = pose[j][1] - pivot[1];
        pose[j][0] = pivot[0] + c * dx - s * dy;
        pose[j][1] = pivot[1] + s * dx + c * dy;
    }
}

struct ClassMotion {
    group: usize,
    cycles: f64,
}

fn class_motion(class: usize, limbs: &[usize]) -> ClassMotion {
    ClassMotion { group: limbs[class % limbs.len()], cycles: 1.0 + (class / limbs.len()) as f64 }
}

fn generate_clip(
    cfg: &SynthConfig,
    topo: &SkeletonTopology,
    rest: &[[f64; 3]],
    limbs: &[usize],
    class: usize,
    rng: &mut ChaCha8Rng,
) -> Array4<f32> {
    let t_len = cfg.frames;
    let noise = cfg.noise;
    let motion = class_motion(class, limbs);
    let phase = noise * rng.random_range(-PI..PI);
    let amp = cfg.swing_amplitude * (1.0 + noise * rng.random_range(-0.2..0.2));

    // distractor swings on every other limb
    let distract: Vec<(usize, f64, f64, f64)> = limbs
        .iter()
        .filter(|&&g| g != motion.group)
        .map(|&g| {
            (
                g,
                noise * cfg.distractor_amplitude * rng.random_range(0.0..1.0),
                rng.random_range(0.5..3.0),
                rng.random_range(-PI..PI),
            )
        })
        .collect();
    let drift: Vec<f64> = (0..3).map(|_| noise * cfg.drift * rng.random_range(-1.0..1.0)).collect();
    let yaw = noise * cfg.yaw * rng.random_range(-1.0..1.0);
    let jitter = Normal::new(0.0, (noise * cfg.jitter).max(0.0)).unwrap();

    let pivot_of = |g: usize| -> usize {
        let first = topo.parts()[g].joints[0];
        let members = &topo.parts()[g].joints;
        // the attachment joint is the parent of the group's topmost member
        members
            .iter()
            .filter_map(|&j| topo.parent(j))
            .find(|p| !members.contains(p))
            .unwrap_or(first)
    };

    let v = topo.joint_count();
    let mut out = Array4::<f32>::zeros((3, t_len, v, 1));
    for t in 0..t_len {
        let tau = t as f64 / t_len as f64;
        let mut pose = rest.to_vec();
        let angle = amp * (2.0 * PI * motion.cycles * tau + phase).sin();
        let pivot = pose[pivot_of(motion.group)];
        swing(&mut pose, &topo.parts()[motion.group].joints, pivot, angle);
        for &(g, a, f, ph) in &distract {
            let pivot = pose[pivot_of(g)];
            swing(&mut pose, &topo.parts()[g].joints, pivot, a * (2.0 * PI * f * tau + ph).sin());
        }
        let (sy, cy) = yaw.sin_cos();
        for (j, p) in pose.iter().enumerate() {
            let x = cy * p[0] + sy * p[2];
            let z = -sy * p[0] + cy * p[2];
            let coords = [x, p[1], z];
            for c in 0..3 {
                let value = coords[c] + drift[c] * tau + jitter.sample(rng);
                out[[c, t, j, 0]] = value as f32;
            }
        }
    }
    out
}

/// Deterministic in `(cfg, seed)`; samples are grouped by class.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    synth_generate_split(cfg, seed, Split::Train)
}

pub fn synth_generate_split(cfg: &SynthConfig, seed: u64, split: Split) -> Result<Dataset> {
    let topo = Arc::new(cfg.validate()?);
    let rest = rest_pose(&topo);
    let limbs = limb_groups(&topo);
    let mut samples = Vec::with_capacity(cfg.class_count * cfg.samples_per_class);
    for class in 0..cfg.class_count {
        for i in 0..cfg.samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((class * cfg.samples_per_class + i) as u64);
            let coords = generate_clip(cfg, &topo, &rest, &limbs, class, &mut rng);
            samples.push(SkeletonSequence::new(coords, topo.clone(), Some(class))?);
        }
    }
    Dataset::new(samples, cfg.class_count, split)
}

/// Train/test pair drawn from disjoint seed streams.
pub fn synth_train_test(cfg: &SynthConfig, test_per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let train = synth_generate_split(cfg, seed, Split::Train)?;
    let test_cfg = SynthConfig { samples_per_class: test_per_class, ..cfg.clone() };
    let test = synth_generate_split(&test_cfg, seed ^ 0x5EED_7E57_0000_0001, Split::Test)?;
    Ok((train, test))
}
