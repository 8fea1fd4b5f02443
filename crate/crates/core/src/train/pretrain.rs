//! The self-supervised training loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::eval::{knn_evaluate, EvalReport};
use super::model::{make_views, named_grads, SkeAttn};
use super::optim::Sgd;
use crate::augment::MixRecord;
use crate::autodiff::{Graph, LeafKind, ParamStore};
use crate::contrastive::{dynamic_momentum, momentum_update, MemoryBank};
use crate::error::{Error, Result};
use crate::skeleton::{save_dataset, Dataset, SkeletonSequence, Split};

/// One optimizer step's losses and schedule values.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub iter: usize,
    pub momentum: f64,
    pub lr: f64,
    pub info: f64,
    pub salient: f64,
    pub non_salient: f64,
    pub local: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "iter,M,lr,L_info,L_s,L_ns,L_local,L";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iter, self.momentum, self.lr, self.info, self.salient, self.non_salient, self.local, self.total
        )
    }
}

pub fn loss_csv(records: &[StepRecord]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// All mutable training state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub query: ParamStore<f32>,
    pub key: ParamStore<f32>,
    pub bank: MemoryBank,
    pub optimizer: Sgd<f32>,
    pub iter: usize,
}

/// Labeled splits used for the periodic nearest-neighbour probe.
#[derive(Clone, Copy, Debug)]
pub struct Probe<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub steps: Vec<StepRecord>,
    /// Mean total loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub knn_history: Vec<(usize, EvalReport)>,
    /// Epoch and report of the best probe, if any probe ran.
    pub best: Option<(usize, EvalReport)>,
    /// Query parameters at the best probe (or at the end without probes).
    pub best_params: ParamStore<f32>,
    pub state: TrainState,
    /// Mixing choices of the first epoch, one per sample.
    pub first_epoch_mixes: Vec<(usize, MixRecord)>,
}

pub struct Trainer {
    pub model: SkeAttn,
    pub cfg: TrainConfig,
    pub state: TrainState,
    /// Where to dump a failing batch; nothing is written when `None`.
    pub dump_dir: Option<PathBuf>,
    steps_per_epoch: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, train: &Dataset) -> Result<Self> {
        let topology = train.topology().ok_or(Error::EmptyTrainSet)?;
        let model = SkeAttn::new(cfg, topology)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let query = model.init_params::<f32, _>(&mut rng);
        let key = model.key_params(&query);
        let bank = MemoryBank::random(cfg.queue_size, cfg.feature_dim, &mut rng);
        let steps_per_epoch = train.len() / cfg.batch_size;
        if steps_per_epoch == 0 {
            return Err(Error::InvalidConfig(format!(
                "train set of {} samples is smaller than one batch of {}",
                train.len(),
                cfg.batch_size
            )));
        }
        let optimizer = Sgd::new(cfg.sgd_momentum, cfg.weight_decay, cfg.nesterov);
        Ok(Self {
            model,
            cfg: cfg.clone(),
            state: TrainState { query, key, bank, optimizer, iter: 0 },
            dump_dir: None,
            steps_per_epoch,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_epoch * self.cfg.epochs
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.cfg.lr_drop_epoch {
            self.cfg.base_lr * 0.1
        } else {
            self.cfg.base_lr
        }
    }

    /// Sample order for one epoch; the trailing partial batch is dropped.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x0BAD_5EED);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One optimizer step on the given dataset positions.
    pub fn step(&mut self, train: &Dataset, indices: &[usize], epoch: usize) -> Result<(StepRecord, Vec<MixRecord>)> {
        let batch: Vec<&SkeletonSequence> = indices.iter().map(|&i| &train.samples[i]).collect();
        let (views, mixes) = make_views::<f32>(&batch, indices, &self.cfg, epoch)?;
        let iter = self.state.iter;
        let lr = self.lr_at(epoch);
        let iter_max = self.cfg.iter_max.unwrap_or(self.total_steps());
        let momentum = dynamic_momentum(iter.min(iter_max), iter_max, self.cfg.base_momentum)?;

        let g = Graph::<f32>::new();
        let query = self.state.query.bind(&g, LeafKind::Trainable);
        let key = self.state.key.bind(&g, LeafKind::Constant);
        let objective = self
            .model
            .objective(&g, &query, &key, &views, &self.state.bank.tensor())
            .and_then(|o| g.fault().map_or(Ok(o), Err));
        let objective = match objective {
            Ok(o) => o,
            Err(e) => return Err(self.non_finite(iter, &batch, e.to_string())),
        };
        let value = |v| g.scalar(v) as f64;
        let (salient, non_salient, local) = match objective.local {
            Some(l) => (value(l.salient), value(l.non_salient), value(l.local)),
            None => (0.0, 0.0, 0.0),
        };
        let record = StepRecord {
            iter,
            momentum,
            lr,
            info: value(objective.info),
            salient,
            non_salient,
            local,
            total: value(objective.total),
        };
        if !record.total.is_finite() {
            return Err(self.non_finite(iter, &batch, format!("{record:?}")));
        }
        let grads = g.backward(objective.total).map_err(|e| self.non_finite(iter, &batch, e.to_string()))?;
        let grads = named_grads(&g, &query, &grads);
        if let Some((name, _)) = grads.iter().find(|(_, t)| !t.is_finite()) {
            return Err(self.non_finite(iter, &batch, format!("gradient of `{name}`")));
        }
        let z_k = g.tensor(objective.key_embedding);
        drop(g);

        self.state.optimizer.step(&mut self.state.query, &grads, lr)?;
        let query_side = self.model.key_params(&self.state.query);
        momentum_update(&mut self.state.key, &query_side, momentum)?;
        let z_k = Array2::from_shape_vec((z_k.shape()[0], z_k.shape()[1]), z_k.to_vec())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        self.state.bank.enqueue(z_k.view())?;
        self.state.iter += 1;
        Ok((record, mixes))
    }

    fn non_finite(&self, iter: usize, batch: &[&SkeletonSequence], detail: String) -> Error {
        let mut detail = detail;
        if let Some(dir) = &self.dump_dir {
            let samples = batch.iter().map(|s| (*s).clone()).collect();
            let class_count = batch.iter().filter_map(|s| s.label()).max().map_or(0, |m| m + 1);
            if let Ok(ds) = Dataset::new(samples, class_count, Split::Train) {
                let path = dir.join(format!("nonfinite_batch_iter{iter}.skd"));
                if save_dataset(&ds, &path).is_ok() {
                    let _ = write!(detail, " (batch written to {})", path.display());
                }
            }
        }
        Error::NonFiniteLoss { iter, detail }
    }

    /// Runs every epoch, probing with k-NN every `knn_every` epochs and at
    /// the end when `probe` is given. `on_step` sees each record as it is
    /// produced.
    pub fn run(
        mut self,
        train: &Dataset,
        probe: Option<Probe<'_>>,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<PretrainOutcome> {
        let mut steps = Vec::with_capacity(self.total_steps());
        let mut epoch_losses = Vec::with_capacity(self.cfg.epochs);
        let mut knn_history = Vec::new();
        let mut best: Option<(usize, EvalReport)> = None;
        let mut best_params = self.state.query.clone();
        let mut first_epoch_mixes = Vec::new();
        let b = self.cfg.batch_size;
        for epoch in 0..self.cfg.epochs {
            let order = self.epoch_order(epoch, train.len());
            let mut sum = 0.0;
            for chunk in order.chunks_exact(b) {
                let (record, mixes) = self.step(train, chunk, epoch)?;
                if epoch == 0 {
                    first_epoch_mixes.extend(chunk.iter().copied().zip(mixes));
                }
                sum += record.total;
                on_step(&record);
                steps.push(record);
            }
            epoch_losses.push(sum / self.steps_per_epoch as f64);

            let last = epoch + 1 == self.cfg.epochs;
            let due = self.cfg.knn_every > 0 && (epoch + 1) % self.cfg.knn_every == 0;
            if let (Some(p), true) = (probe, due || last) {
                let report = knn_evaluate(
                    &self.model,
                    &self.state.query,
                    p.train,
                    p.test,
                    self.cfg.stream,
                    self.cfg.knn_k,
                    Some(epoch + 1),
                )?;
                if best.as_ref().is_none_or(|(_, r)| report.accuracy > r.accuracy) {
                    best = Some((epoch + 1, report.clone()));
                    best_params = self.state.query.clone();
                }
                knn_history.push((epoch + 1, report));
            }
        }
        if probe.is_none() {
            best_params = self.state.query.clone();
        }
        Ok(PretrainOutcome {
            steps,
            epoch_losses,
            knn_history,
            best,
            best_params,
            state: self.state,
            first_epoch_mixes,
        })
    }
}

/// Convenience wrapper: build a trainer and run it.
pub fn pretrain(cfg: &TrainConfig, train: &Dataset, probe: Option<Probe<'_>>) -> Result<PretrainOutcome> {
    Trainer::new(cfg, train)?.run(train, probe, |_| {})
}

/// Writes `loss.csv` and the mixing log into `dir`.
pub fn write_logs(dir: &Path, outcome: &PretrainOutcome) -> Result<()> {
    std::fs::write(dir.join("loss.csv"), loss_csv(&outcome.steps))?;
    let mut mixes = String::from("sample,groups,start,len\n");
    for (i, m) in &outcome.first_epoch_mixes {
        let groups: Vec<String> = m.groups.iter().map(|g| g.to_string()).collect();
        let _ = writeln!(mixes, "{i},{},{},{}", groups.join(" "), m.start, m.len);
    }
    std::fs::write(dir.join("mix_log.csv"), mixes)?;
    let mut knn = String::from("epoch,accuracy\n");
    for (e, r) in &outcome.knn_history {
        let _ = writeln!(knn, "{e},{}", r.accuracy);
    }
    std::fs::write(dir.join("knn.csv"), knn)?;
    Ok(())
}
