//! Run configuration and its flat `key = value` file format.
//!
//! Blank lines and `#` comments are ignored. A `preset = desk|ntu` line,
//! wherever it appears, selects the starting values; every other key then
//! overrides one field. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::augment::{AugmentConfig, MixConfig, SpatialMode, SwapMode};
use crate::encoder::{EncoderConfig, LayerSpec};
use crate::error::{Error, Result};
use crate::skeleton::{SkeletonTopology, Stream, SynthConfig};

/// Parsed `key = value` pairs in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    pub entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!("line {}: expected `key = value`, got `{line}`", no + 1)));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", no + 1)));
            }
            entries.push((key, v.trim().trim_matches('"').to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries.iter().cloned().collect()
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| Error::InvalidConfig(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

/// `16:1,32:2,64:1` style layer lists (channels:stride).
pub fn parse_layers(v: &str) -> Result<Vec<LayerSpec>> {
    v.split(',')
        .map(|item| {
            let (c, s) = item.trim().split_once(':').unwrap_or((item.trim(), "1"));
            Ok(LayerSpec { channels: parse_value("encoder_layers", c)?, stride: parse_value("encoder_layers", s)? })
        })
        .collect()
}

pub fn format_layers(layers: &[LayerSpec]) -> String {
    layers.iter().map(|l| format!("{}:{}", l.channels, l.stride)).collect::<Vec<_>>().join(",")
}

/// Linear-probe schedule on frozen features.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    pub lr_drop_epoch: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Whole-network finetuning with a plateau schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub label_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { lr: 0.1, epochs: 100, lr_drop_epoch: 60, batch_size: 32, momentum: 0.9, weight_decay: 0.0 }
    }
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 30,
            patience: 5,
            decay_factor: 0.1,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 1e-4,
            label_fraction: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub stream: Stream,
    pub topology: String,
    pub epochs: usize,
    pub lr_drop_epoch: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub sgd_momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    /// Starting value of the key-encoder momentum.
    pub base_momentum: f64,
    /// Length of the momentum ramp in optimizer steps; `None` means the
    /// whole run.
    pub iter_max: Option<usize>,
    pub feature_dim: usize,
    pub queue_size: usize,
    pub temperature: f64,
    pub mask_gain: f64,
    pub mu: f64,
    pub heads: usize,
    pub predictor_depth: usize,
    pub use_local: bool,
    pub negative_pair: bool,
    pub non_salient: bool,
    /// Give the attention module a momentum copy that masks the key
    /// features, instead of reusing the query-side mask.
    pub mask_momentum_twin: bool,
    pub knn_every: usize,
    pub knn_k: usize,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub probe: ProbeConfig,
    pub finetune: FinetuneConfig,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            seed: 0,
            stream: Stream::Joint,
            topology: "desk9".into(),
            epochs: 50,
            lr_drop_epoch: 40,
            batch_size: 32,
            base_lr: 0.1,
            sgd_momentum: 0.9,
            nesterov: false,
            weight_decay: 1e-4,
            base_momentum: 0.996,
            iter_max: None,
            feature_dim: 128,
            queue_size: 512,
            temperature: 0.2,
            mask_gain: 2.0,
            mu: 0.5,
            heads: 8,
            predictor_depth: 2,
            use_local: true,
            negative_pair: true,
            non_salient: true,
            mask_momentum_twin: false,
            knn_every: 10,
            knn_k: 1,
            augment: AugmentConfig { window_size: 16, ..AugmentConfig::default() },
            encoder: EncoderConfig::desk(),
            probe: ProbeConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }

    pub fn ntu() -> Self {
        let desk = Self::desk();
        Self {
            topology: "ntu25".into(),
            epochs: 300,
            lr_drop_epoch: 250,
            batch_size: 128,
            queue_size: 32768,
            augment: AugmentConfig { window_size: 64, ..AugmentConfig::default() },
            encoder: EncoderConfig::ntu(),
            probe: ProbeConfig { lr: 3.0, ..desk.probe.clone() },
            ..desk
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "ntu" => Ok(Self::ntu()),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}` (expected desk or ntu)"))),
        }
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::preset(kv.get("preset").unwrap_or("desk"))?;
        for (k, v) in &kv.entries {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "seed" => self.seed = parse_value(k, v)?,
            "stream" => self.stream = v.parse()?,
            "topology" | "layout" => self.topology = v.to_string(),
            "epochs" => self.epochs = parse_value(k, v)?,
            "lr_drop_epoch" => self.lr_drop_epoch = parse_value(k, v)?,
            "batch_size" => self.batch_size = parse_value(k, v)?,
            "base_lr" | "lr" => self.base_lr = parse_value(k, v)?,
            "sgd_momentum" => self.sgd_momentum = parse_value(k, v)?,
            "nesterov" => self.nesterov = parse_bool(k, v)?,
            "weight_decay" => self.weight_decay = parse_value(k, v)?,
            "momentum" | "base_momentum" => self.base_momentum = parse_value(k, v)?,
            "iter_max" => {
                self.iter_max = if v == "auto" { None } else { Some(parse_value(k, v)?) };
            }
            "feature_dim" => self.feature_dim = parse_value(k, v)?,
            "queue_size" => self.queue_size = parse_value(k, v)?,
            "temperature" => self.temperature = parse_value(k, v)?,
            "lambda" | "mask_gain" => self.mask_gain = parse_value(k, v)?,
            "mu" => self.mu = parse_value(k, v)?,
            "heads" => self.heads = parse_value(k, v)?,
            "predictor_depth" => self.predictor_depth = parse_value(k, v)?,
            "use_local" => self.use_local = parse_bool(k, v)?,
            "negative_pair" => self.negative_pair = parse_bool(k, v)?,
            "non_salient" => self.non_salient = parse_bool(k, v)?,
            "mask_momentum_twin" => self.mask_momentum_twin = parse_bool(k, v)?,
            "knn_every" => self.knn_every = parse_value(k, v)?,
            "knn_k" => self.knn_k = parse_value(k, v)?,
            "window_size" => self.augment.window_size = parse_value(k, v)?,
            "shear_amplitude" => self.augment.shear_amplitude = parse_value(k, v)?,
            "temporal_padding_ratio" | "temperal_padding_ratio" => {
                self.augment.temporal_padding_ratio = parse_value(k, v)?
            }
            "mmap" => {
                parse_bool(k, v)?;
            }
            "spatial_l" | "spacial_l" => self.augment.mix.spatial_l = parse_value(k, v)?,
            "spatial_u" | "spacial_u" => self.augment.mix.spatial_u = parse_value(k, v)?,
            "temporal_l" => self.augment.mix.temporal_l = parse_value(k, v)?,
            "temporal_u" => self.augment.mix.temporal_u = parse_value(k, v)?,
            "swap_mode" => {
                self.augment.mix.swap_mode = match v {
                    "swap" => SwapMode::Swap,
                    _ => return Err(Error::InvalidConfig(format!("swap_mode `{v}` unsupported (only `swap`)"))),
                }
            }
            "spatial_mode" => {
                self.augment.mix.spatial_mode = match v {
                    "semantic" => SpatialMode::Semantic,
                    _ => return Err(Error::InvalidConfig(format!("spatial_mode `{v}` unsupported (only `semantic`)"))),
                }
            }
            "encoder" => {
                let keep = (self.encoder.in_channels, self.encoder.edge_importance);
                self.encoder = EncoderConfig::preset(v)?;
                (self.encoder.in_channels, self.encoder.edge_importance) = keep;
            }
            "encoder_layers" => self.encoder.layers = parse_layers(v)?,
            "in_channel" | "in_channels" => self.encoder.in_channels = parse_value(k, v)?,
            "temporal_kernel" => self.encoder.temporal_kernel = parse_value(k, v)?,
            "edge_importance_weighting" => self.encoder.edge_importance = parse_bool(k, v)?,
            "probe_lr" => self.probe.lr = parse_value(k, v)?,
            "probe_epochs" => self.probe.epochs = parse_value(k, v)?,
            "probe_lr_drop_epoch" => self.probe.lr_drop_epoch = parse_value(k, v)?,
            "probe_batch_size" => self.probe.batch_size = parse_value(k, v)?,
            "probe_weight_decay" => self.probe.weight_decay = parse_value(k, v)?,
            "finetune_lr" => self.finetune.lr = parse_value(k, v)?,
            "finetune_epochs" => self.finetune.epochs = parse_value(k, v)?,
            "finetune_patience" => self.finetune.patience = parse_value(k, v)?,
            "finetune_decay_factor" => self.finetune.decay_factor = parse_value(k, v)?,
            "finetune_batch_size" => self.finetune.batch_size = parse_value(k, v)?,
            "finetune_weight_decay" => self.finetune.weight_decay = parse_value(k, v)?,
            "label_fraction" => self.finetune.label_fraction = parse_value(k, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.base_lr > 0.0) {
            return bad(format!("base_lr {} must be > 0", self.base_lr));
        }
        if self.epochs == 0 || self.lr_drop_epoch >= self.epochs {
            return bad(format!("need 0 <= lr_drop_epoch < epochs, got {} and {}", self.lr_drop_epoch, self.epochs));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 (mixing pairs neighbours)".into());
        }
        if !(self.base_momentum > 0.0 && self.base_momentum < 1.0) {
            return bad(format!("momentum {} must lie in (0, 1)", self.base_momentum));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) || !(self.weight_decay >= 0.0) {
            return bad("sgd_momentum must lie in [0, 1) and weight_decay be >= 0".into());
        }
        if self.queue_size == 0 || self.feature_dim == 0 || self.predictor_depth == 0 {
            return bad("queue_size, feature_dim and predictor_depth must be positive".into());
        }
        if self.knn_k == 0 {
            return bad("knn_k must be positive".into());
        }
        if !(self.finetune.label_fraction > 0.0 && self.finetune.label_fraction <= 1.0) {
            return bad(format!("label_fraction {} must lie in (0, 1]", self.finetune.label_fraction));
        }
        if self.probe.epochs > 0 && self.probe.lr_drop_epoch > self.probe.epochs {
            return bad("probe_lr_drop_epoch must not exceed probe_epochs".into());
        }
        crate::contrastive::LossWeights { temperature: self.temperature, mu: self.mu }.validate()?;
        self.encoder.validate()?;
        let topo = SkeletonTopology::preset(&self.topology)?;
        self.augment.validate(topo.parts().len())?;
        let channels = self.encoder.layers.last().map(|l| l.channels).unwrap_or(0);
        crate::attention::Mhsam::new(channels, self.heads, self.mask_gain)?;
        Ok(())
    }

    /// The config as `key = value` text that [`TrainConfig::load`] reads
    /// back to an equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut w = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        w("seed", self.seed.to_string());
        w("stream", self.stream.to_string());
        w("topology", self.topology.clone());
        w("epochs", self.epochs.to_string());
        w("lr_drop_epoch", self.lr_drop_epoch.to_string());
        w("batch_size", self.batch_size.to_string());
        w("base_lr", self.base_lr.to_string());
        w("sgd_momentum", self.sgd_momentum.to_string());
        w("nesterov", self.nesterov.to_string());
        w("weight_decay", self.weight_decay.to_string());
        w("momentum", self.base_momentum.to_string());
        w("iter_max", self.iter_max.map(|i| i.to_string()).unwrap_or_else(|| "auto".into()));
        w("feature_dim", self.feature_dim.to_string());
        w("queue_size", self.queue_size.to_string());
        w("temperature", self.temperature.to_string());
        w("lambda", self.mask_gain.to_string());
        w("mu", self.mu.to_string());
        w("heads", self.heads.to_string());
        w("predictor_depth", self.predictor_depth.to_string());
        w("use_local", self.use_local.to_string());
        w("negative_pair", self.negative_pair.to_string());
        w("non_salient", self.non_salient.to_string());
        w("mask_momentum_twin", self.mask_momentum_twin.to_string());
        w("knn_every", self.knn_every.to_string());
        w("knn_k", self.knn_k.to_string());
        w("window_size", self.augment.window_size.to_string());
        w("shear_amplitude", self.augment.shear_amplitude.to_string());
        w("temporal_padding_ratio", self.augment.temporal_padding_ratio.to_string());
        let MixConfig { spatial_l, spatial_u, temporal_l, temporal_u, .. } = self.augment.mix;
        w("spatial_l", spatial_l.to_string());
        w("spatial_u", spatial_u.to_string());
        w("temporal_l", temporal_l.to_string());
        w("temporal_u", temporal_u.to_string());
        w("swap_mode", "swap".into());
        w("spatial_mode", "semantic".into());
        w("in_channels", self.encoder.in_channels.to_string());
        w("encoder_layers", format_layers(&self.encoder.layers));
        w("temporal_kernel", self.encoder.temporal_kernel.to_string());
        w("edge_importance_weighting", self.encoder.edge_importance.to_string());
        w("probe_lr", self.probe.lr.to_string());
        w("probe_epochs", self.probe.epochs.to_string());
        w("probe_lr_drop_epoch", self.probe.lr_drop_epoch.to_string());
        w("probe_batch_size", self.probe.batch_size.to_string());
        w("probe_weight_decay", self.probe.weight_decay.to_string());
        w("finetune_lr", self.finetune.lr.to_string());
        w("finetune_epochs", self.finetune.epochs.to_string());
        w("finetune_patience", self.finetune.patience.to_string());
        w("finetune_decay_factor", self.finetune.decay_factor.to_string());
        w("finetune_batch_size", self.finetune.batch_size.to_string());
        w("finetune_weight_decay", self.finetune.weight_decay.to_string());
        w("label_fraction", self.finetune.label_fraction.to_string());
        s
    }
}

/// Reads a synthetic-data config: any [`SynthConfig`] field by name plus
/// `seed` and `test_per_class`. Returns the config, seed, and test size.
pub fn synth_config_from(kv: &KeyValues) -> Result<(SynthConfig, u64, usize)> {
    let mut cfg = SynthConfig::default();
    let mut seed = 0;
    let mut test_per_class = 50;
    for (k, v) in &kv.entries {
        let k = k.as_str();
        match k {
            "seed" => seed = parse_value(k, v)?,
            "test_per_class" => test_per_class = parse_value(k, v)?,
            "class_count" => cfg.class_count = parse_value(k, v)?,
            "samples_per_class" => cfg.samples_per_class = parse_value(k, v)?,
            "frames" | "window_size" => cfg.frames = parse_value(k, v)?,
            "topology" => cfg.topology = v.clone(),
            "noise" => cfg.noise = parse_value(k, v)?,
            "swing_amplitude" => cfg.swing_amplitude = parse_value(k, v)?,
            "distractor_amplitude" => cfg.distractor_amplitude = parse_value(k, v)?,
            "drift" => cfg.drift = parse_value(k, v)?,
            "yaw" => cfg.yaw = parse_value(k, v)?,
            "jitter" => cfg.jitter = parse_value(k, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown synth key `{k}`"))),
        }
    }
    cfg.validate()?;
    Ok((cfg, seed, test_per_class))
}
