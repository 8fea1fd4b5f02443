//! Checkpoint directories.
//!
//! A checkpoint is a directory holding `manifest.txt`, `config.txt` and one
//! SKT1 file per tensor. Manifest lines are `key = value`:
//!
//! ```text
//! param.encoder.layer0.spatial = query/encoder.layer0.spatial.skt
//! key.encoder.layer0.spatial = key/encoder.layer0.spatial.skt
//! velocity.encoder.layer0.spatial = velocity/encoder.layer0.spatial.skt
//! bank.data = bank.skt
//! bank.cursor = 17
//! bank.len = 512
//! meta.config = config.txt
//! meta.iter = 1250
//! meta.epoch = 50
//! meta.knn_accuracy = 0.93
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Ix2;

use super::config::{KeyValues, TrainConfig};
use super::optim::Sgd;
use super::pretrain::TrainState;
use crate::autodiff::ParamStore;
use crate::contrastive::MemoryBank;
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
    pub epoch: usize,
    pub knn_accuracy: Option<f64>,
}

fn write_group(
    dir: &Path,
    sub: &str,
    prefix: &str,
    tensors: impl Iterator<Item = (String, Tensor<f32>)>,
    manifest: &mut String,
) -> Result<()> {
    fs::create_dir_all(dir.join(sub))?;
    for (name, t) in tensors {
        let rel = format!("{sub}/{name}.skt");
        write_tensor(&t, dir.join(&rel))?;
        writeln!(manifest, "{prefix}.{name} = {rel}").unwrap();
    }
    Ok(())
}

pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let s = &ckpt.state;
    write_group(dir, "query", "param", s.query.iter().map(|(n, t)| (n.to_string(), t.clone())), &mut manifest)?;
    write_group(dir, "key", "key", s.key.iter().map(|(n, t)| (n.to_string(), t.clone())), &mut manifest)?;
    let mut velocity: Vec<_> = s.optimizer.velocity().iter().map(|(n, t)| (n.clone(), t.clone())).collect();
    velocity.sort_by(|a, b| a.0.cmp(&b.0));
    write_group(dir, "velocity", "velocity", velocity.into_iter(), &mut manifest)?;
    write_tensor(&Tensor::from_array(s.bank.raw().to_owned().into_dyn()), dir.join("bank.skt"))?;
    writeln!(manifest, "bank.data = bank.skt").unwrap();
    writeln!(manifest, "bank.cursor = {}", s.bank.cursor()).unwrap();
    writeln!(manifest, "bank.len = {}", s.bank.len()).unwrap();
    fs::write(dir.join("config.txt"), ckpt.config.to_text())?;
    writeln!(manifest, "meta.config = config.txt").unwrap();
    writeln!(manifest, "meta.iter = {}", s.iter).unwrap();
    writeln!(manifest, "meta.epoch = {}", ckpt.epoch).unwrap();
    if let Some(acc) = ckpt.knn_accuracy {
        writeln!(manifest, "meta.knn_accuracy = {acc}").unwrap();
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn bad(msg: String) -> Error {
    Error::Format { offset: 0, msg }
}

fn number<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<T> {
    let raw = kv.get(key).ok_or_else(|| bad(format!("manifest lacks `{key}`")))?;
    raw.parse().map_err(|_| bad(format!("manifest `{key}` = `{raw}` is not a number")))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let kv = KeyValues::parse(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let config_file = kv.get("meta.config").unwrap_or("config.txt");
    let config = TrainConfig::load(dir.join(config_file))?;
    let mut query = ParamStore::new();
    let mut key = ParamStore::new();
    let mut optimizer = Sgd::new(config.sgd_momentum, config.weight_decay, config.nesterov);
    for (k, rel) in kv.to_map() {
        let load = || -> Result<Tensor<f32>> { Ok(read_tensor(dir.join(&rel))?.into_precision()) };
        if let Some(name) = k.strip_prefix("param.") {
            query.insert(name, load()?);
        } else if let Some(name) = k.strip_prefix("key.") {
            key.insert(name, load()?);
        } else if let Some(name) = k.strip_prefix("velocity.") {
            optimizer.set_velocity(name, load()?);
        }
    }
    let bank_path = kv.get("bank.data").ok_or_else(|| bad("manifest lacks `bank.data`".into()))?;
    let data = read_tensor(dir.join(bank_path))?
        .into_precision::<f32>()
        .into_array()
        .into_dimensionality::<Ix2>()
        .map_err(|e| bad(format!("bank tensor: {e}")))?;
    let bank = MemoryBank::from_parts(data, number(&kv, "bank.cursor")?, number(&kv, "bank.len")?)?;
    let knn_accuracy = match kv.get("meta.knn_accuracy") {
        Some(_) => Some(number(&kv, "meta.knn_accuracy")?),
        None => None,
    };
    Ok(Checkpoint {
        state: TrainState { query, key, bank, optimizer, iter: number(&kv, "meta.iter")? },
        epoch: number(&kv, "meta.epoch")?,
        knn_accuracy,
        config,
    })
}
