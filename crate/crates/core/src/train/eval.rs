//! Downstream protocols: k-NN, linear probe, finetuning, stream fusion.

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{FinetuneConfig, ProbeConfig};
use super::model::{named_grads, plain_input, SkeAttn};
use super::optim::Sgd;
use crate::autodiff::{to_array2, Graph, LeafKind, ParamStore, Var};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::skeleton::{Dataset, SkeletonSequence, Stream};
use crate::tensor::{lit, Tensor};

const EMBED_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub protocol: String,
    pub accuracy: f64,
    pub epoch: Option<usize>,
    pub per_class: Vec<f64>,
    pub support: Vec<usize>,
}

impl EvalReport {
    pub fn from_predictions(
        protocol: &str,
        predictions: &[usize],
        labels: &[usize],
        class_count: usize,
        epoch: Option<usize>,
    ) -> Self {
        let mut hits = vec![0usize; class_count];
        let mut support = vec![0usize; class_count];
        for (&p, &y) in predictions.iter().zip(labels) {
            support[y] += 1;
            if p == y {
                hits[y] += 1;
            }
        }
        let per_class = hits.iter().zip(&support).map(|(&h, &s)| if s == 0 { 0.0 } else { h as f64 / s as f64 }).collect();
        let correct: usize = hits.iter().sum();
        let accuracy = if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 };
        Self { protocol: protocol.to_string(), accuracy, epoch, per_class, support }
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} accuracy {:.4}", self.protocol, self.accuracy)?;
        if let Some(e) = self.epoch {
            write!(f, " (epoch {e})")?;
        }
        let per: Vec<String> = self.per_class.iter().map(|a| format!("{a:.3}")).collect();
        write!(f, " per-class [{}]", per.join(", "))
    }
}

/// `GAP(E(x))` for every sample, without augmentation, as `(N, C_f)`.
pub fn embed_dataset(model: &SkeAttn, params: &ParamStore<f32>, ds: &Dataset, stream: Stream) -> Result<Array2<f32>> {
    let c = model.encoder.feature_channels();
    let mut out = Array2::<f32>::zeros((ds.len(), c));
    for (chunk_no, chunk) in ds.samples.chunks(EMBED_BATCH).enumerate() {
        let g = Graph::<f32>::with_finite_checks(false);
        let bound = params.bind(&g, LeafKind::Constant);
        let refs: Vec<&SkeletonSequence> = chunk.iter().collect();
        let x = g.constant(&plain_input(&refs, stream)?);
        let z = to_array2(&g.value(model.embed(&g, &bound, x)?));
        let start = chunk_no * EMBED_BATCH;
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&z);
    }
    Ok(out)
}

fn unit_rows(x: &Array2<f32>) -> Array2<f32> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 1e-12 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

/// Cosine k-NN: each test row takes the majority label of its `k` most
/// similar train rows; ties go to the larger summed similarity, then to
/// the smaller class index.
pub fn knn_predict(train: &Array2<f32>, train_labels: &[usize], test: &Array2<f32>, k: usize) -> Result<Vec<usize>> {
    if train.nrows() == 0 {
        return Err(Error::EmptyTrainSet);
    }
    let sims = unit_rows(test).dot(&unit_rows(train).t());
    let k = k.clamp(1, train.nrows());
    let mut preds = Vec::with_capacity(test.nrows());
    for row in sims.rows() {
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let mut votes: HashMap<usize, (usize, f32)> = HashMap::new();
        for &j in &idx[..k] {
            let e = votes.entry(train_labels[j]).or_default();
            e.0 += 1;
            e.1 += row[j];
        }
        let winner = votes
            .into_iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(a.1 .1.total_cmp(&b.1 .1)).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .unwrap();
        preds.push(winner);
    }
    Ok(preds)
}

pub fn knn_from_embeddings(
    train: &Array2<f32>,
    train_labels: &[usize],
    test: &Array2<f32>,
    test_labels: &[usize],
    class_count: usize,
    k: usize,
) -> Result<EvalReport> {
    let preds = knn_predict(train, train_labels, test, k)?;
    Ok(EvalReport::from_predictions("knn", &preds, test_labels, class_count, None))
}

/// Embeds both splits with the frozen encoder and scores k-NN on the test
/// split.
pub fn knn_evaluate(
    model: &SkeAttn,
    params: &ParamStore<f32>,
    train: &Dataset,
    test: &Dataset,
    stream: Stream,
    k: usize,
    epoch: Option<usize>,
) -> Result<EvalReport> {
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let tr = embed_dataset(model, params, train, stream)?;
    let te = embed_dataset(model, params, test, stream)?;
    let mut report = knn_from_embeddings(&tr, &train.labels()?, &te, &test.labels()?, train.class_count, k)?;
    report.epoch = epoch;
    Ok(report)
}

/// Softmax cross-entropy of `(B, K)` logits against one-hot targets,
/// averaged over the batch.
fn cross_entropy(g: &Graph<f32>, logits: Var, labels: &[usize], classes: usize) -> Var {
    let mut onehot = Array2::<f32>::zeros((labels.len(), classes));
    for (i, &y) in labels.iter().enumerate() {
        onehot[[i, y]] = 1.0;
    }
    let target = g.constant(&Tensor::from_array(onehot.into_dyn()));
    let picked = g.sum_axis(g.mul(logits, target), 1);
    g.mean(g.sub(g.logsumexp(logits), picked))
}

fn classifier_params(c: usize, classes: usize, rng: &mut ChaCha8Rng) -> ParamStore<f32> {
    let bound = 1.0 / (c as f64).sqrt();
    let mut p = ParamStore::new();
    let w = (0..c * classes).map(|_| rng.random_range(-bound..bound) as f32).collect();
    p.insert("classifier.weight", Tensor::from_vec(&[c, classes], w).unwrap());
    p.insert("classifier.bias", Tensor::zeros(&[classes]));
    p
}

fn classify(g: &Graph<f32>, p: &crate::autodiff::BoundParams, features: Var) -> Var {
    g.add(g.matmul(features, p.var("classifier.weight")), p.var("classifier.bias"))
}

/// A trained linear classifier over frozen features.
#[derive(Clone, Debug)]
pub struct LinearClassifier {
    pub params: ParamStore<f32>,
}

impl LinearClassifier {
    /// Class scores `(N, K)` for `(N, C)` features.
    pub fn logits(&self, features: &Array2<f32>) -> Array2<f32> {
        let w = to_array2(self.params.get("classifier.weight").unwrap().array());
        let b = self.params.get("classifier.bias").unwrap().array().clone();
        let b = b.into_dimensionality::<ndarray::Ix1>().unwrap();
        features.dot(&w) + &b
    }
}

fn argmax_rows(scores: &Array2<f32>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|r| r.iter().enumerate().fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc }).0)
        .collect()
}

/// Trains a softmax classifier on fixed features with minibatch SGD and a
/// single ×0.1 drop.
pub fn train_linear(
    features: &Array2<f32>,
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<LinearClassifier> {
    if features.nrows() == 0 {
        return Err(Error::EmptyTrainSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = classifier_params(features.ncols(), classes, &mut rng);
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay, false);
    let mut order: Vec<usize> = (0..features.nrows()).collect();
    for epoch in 0..cfg.epochs {
        let lr = if epoch >= cfg.lr_drop_epoch { cfg.lr * 0.1 } else { cfg.lr };
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = features.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let g = Graph::<f32>::new();
            let bound = params.bind(&g, LeafKind::Trainable);
            let logits = classify(&g, &bound, g.constant(&Tensor::from_array(x.into_dyn())));
            let loss = cross_entropy(&g, logits, &y, classes);
            if !g.scalar(loss).is_finite() {
                return Err(Error::NonFiniteLoss { iter: epoch, detail: "linear probe loss".into() });
            }
            let grads = named_grads(&g, &bound, &g.backward(loss)?);
            opt.step(&mut params, &grads, lr)?;
        }
    }
    Ok(LinearClassifier { params })
}

/// Linear evaluation with a frozen encoder. Returns the test report and
/// the trained classifier.
#[allow(clippy::too_many_arguments)]
pub fn linear_probe(
    model: &SkeAttn,
    params: &ParamStore<f32>,
    train: &Dataset,
    test: &Dataset,
    stream: Stream,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(EvalReport, LinearClassifier)> {
    let tr = embed_dataset(model, params, train, stream)?;
    let te = embed_dataset(model, params, test, stream)?;
    let clf = train_linear(&tr, &train.labels()?, train.class_count, cfg, seed)?;
    let preds = argmax_rows(&clf.logits(&te));
    let report = EvalReport::from_predictions("linear", &preds, &test.labels()?, test.class_count, Some(cfg.epochs));
    Ok((report, clf))
}

/// Per class, keeps `floor(fraction * count)` samples chosen by a seeded
/// shuffle. Indices come back sorted.
pub fn stratified_subset(ds: &Dataset, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::OutOfRange(format!("label fraction {fraction} outside (0, 1]")));
    }
    let labels = ds.labels()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for class in 0..ds.class_count {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n = if fraction == 1.0 { members.len() } else { (members.len() as f64 * fraction).floor() as usize };
        if n == 0 {
            return Err(Error::ClassMissing(class));
        }
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..n]);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Finetunes encoder and classifier together on a stratified subset of
/// `train`, dividing the rate by ten whenever the mean epoch loss has not
/// improved for more than `patience` epochs.
pub fn finetune(
    model: &SkeAttn,
    params: &ParamStore<f32>,
    train: &Dataset,
    test: &Dataset,
    stream: Stream,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(EvalReport, ParamStore<f32>)> {
    let keep = stratified_subset(train, cfg.label_fraction, seed)?;
    let labels = train.labels()?;
    let classes = train.class_count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF1_7E);
    let mut all = model.encoder.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0));
    for (name, t) in params.subset("encoder.").iter() {
        all.insert(name, t.clone());
    }
    all.extend(&classifier_params(model.encoder.feature_channels(), classes, &mut rng));
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay, false);
    let mut lr = cfg.lr;
    let (mut best, mut bad) = (f64::INFINITY, 0usize);
    let mut order = keep.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let seqs: Vec<&SkeletonSequence> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let g = Graph::<f32>::new();
            let bound = all.bind(&g, LeafKind::Trainable);
            let x = g.constant(&plain_input(&seqs, stream)?);
            let logits = classify(&g, &bound, model.embed(&g, &bound, x)?);
            let loss = cross_entropy(&g, logits, &y, classes);
            let value = g.scalar(loss) as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { iter: epoch, detail: "finetune loss".into() });
            }
            let grads = named_grads(&g, &bound, &g.backward(loss)?);
            opt.step(&mut all, &grads, lr)?;
            sum += value;
            batches += 1;
        }
        let mean = sum / batches.max(1) as f64;
        if mean < best * (1.0 - 1e-4) {
            best = mean;
            bad = 0;
        } else {
            bad += 1;
            if bad > cfg.patience {
                lr *= cfg.decay_factor;
                bad = 0;
            }
        }
    }
    let tuned = all;
    let clf = LinearClassifier { params: tuned.subset("classifier.") };
    let te = embed_dataset(model, &tuned, test, stream)?;
    let preds = argmax_rows(&clf.logits(&te));
    let protocol = if cfg.label_fraction < 1.0 { "semi-finetune" } else { "finetune" };
    let report = EvalReport::from_predictions(protocol, &preds, &test.labels()?, test.class_count, Some(cfg.epochs));
    Ok((report, tuned))
}

/// Averages per-stream class scores and takes the argmax.
pub fn ensemble_streams(scores: &[Array2<f32>], labels: &[usize], class_count: usize) -> Result<EvalReport> {
    let Some(first) = scores.first() else {
        return Err(Error::StreamMismatch("no streams to fuse".into()));
    };
    if let Some(bad) = scores.iter().find(|s| s.dim() != first.dim()) {
        return Err(Error::StreamMismatch(format!("score shapes {:?} vs {:?}", first.dim(), bad.dim())));
    }
    if first.nrows() != labels.len() {
        return Err(Error::StreamMismatch(format!("{} score rows for {} labels", first.nrows(), labels.len())));
    }
    let mut mean = Array2::<f32>::zeros(first.dim());
    for s in scores {
        mean += s;
    }
    mean /= lit::<f32>(scores.len() as f64);
    Ok(EvalReport::from_predictions("ensemble", &argmax_rows(&mean), labels, class_count, None))
}

/// Row-wise softmax, for turning classifier logits into fusion scores.
pub fn softmax_rows(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s: f32 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

