//! End-to-end acceptance checks for the desk-scale pipeline.
//!
//! Everything runs inside one test so that the timed criteria get the
//! machine to themselves. Each criterion writes a single `PASS`/`FAIL`
//! line straight to stdout (bypassing the harness capture); the test fails
//! at the end if any criterion did.

use std::collections::VecDeque;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use skeattn::autodiff::{finite_difference_report, Coverage, FdOptions, Graph, LeafKind, ParamStore};
use skeattn::attention::{complement, Mhsam};
use skeattn::contrastive::{dynamic_momentum, info_nce, local_losses, momentum_update, LocalSwitches, LossWeights, MemoryBank};
use skeattn::skeleton::{synth_generate, synth_train_test, Dataset, SkeletonSequence, SynthConfig};
use skeattn::tensor::Tensor;
use skeattn::train::{make_views, named_grads, Probe, SkeAttn, StepRecord, TrainConfig, Trainer};

const SEEDS: [u64; 3] = [0, 1, 2];
const TEST_PER_CLASS: usize = 50;

type Verdict = (bool, String);

fn report(id: usize, name: &str, verdict: &Verdict) {
    let tag = if verdict.0 { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id} {tag} {name}: {}", verdict.1);
    let _ = out.flush();
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

fn rows_tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::from_vec(&[rows.len(), rows[0].len()], rows.concat()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-log(e^{pos/t} / sum e^{l/t})` for one anchor, by direct summation.
fn scalar_nce(pos: f64, negatives: &[f64], tau: f64) -> f64 {
    let denom: f64 = std::iter::once(pos).chain(negatives.iter().copied()).map(|l| (l / tau).exp()).sum();
    -((pos / tau).exp() / denom).ln()
}

fn oracle_info(q: &[Vec<f64>], k: &[Vec<f64>], bank: &[Vec<f64>], tau: f64) -> f64 {
    let total: f64 = q
        .iter()
        .zip(k)
        .map(|(qi, ki)| {
            let negs: Vec<f64> = bank.iter().map(|m| dot(qi, m)).collect();
            scalar_nce(dot(qi, ki), &negs, tau)
        })
        .sum();
    total / q.len() as f64
}

fn oracle_local(anchor: &[Vec<f64>], key: &[Vec<f64>], other: &[Vec<f64>], bank: &[Vec<f64>], tau: f64, pair: bool) -> f64 {
    let total: f64 = (0..anchor.len())
        .map(|i| {
            let mut negs = Vec::new();
            if pair {
                negs.push(dot(&anchor[i], &other[i]));
            }
            negs.extend(bank.iter().map(|m| dot(&anchor[i], m)));
            scalar_nce(dot(&anchor[i], &key[i]), &negs, tau)
        })
        .sum();
    total / anchor.len() as f64
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let cfg = TrainConfig::desk();
    let data = synth_generate(&SynthConfig { samples_per_class: 1, ..SynthConfig::default() }, 11).unwrap();
    let model = SkeAttn::new(&cfg, data.topology().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let query = model.init_params::<f64, _>(&mut rng);
    let key = model.key_params(&query);
    let bank = MemoryBank::random(cfg.queue_size, cfg.feature_dim, &mut rng).tensor().cast::<f64>();
    let batch: Vec<&SkeletonSequence> = data.samples.iter().take(2).collect();
    let (views, _) = make_views::<f64>(&batch, &[0, 1], &cfg, 0).unwrap();
    let opts = FdOptions { coverage: Coverage::Sampled { per_tensor: 64, seed: 3 }, ..FdOptions::default() };
    let report = finite_difference_report(
        |g, p| {
            let k = key.bind(g, LeafKind::Constant);
            Ok(model.objective(g, p, &k, &views, &bank)?.total)
        },
        &query,
        &opts,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = report.max_rel_err();
    let offenders = report.offenders(1e-4);
    let tensors = query.len();
    let probes = report.entries.len();
    (
        offenders.is_empty() && secs <= 60.0,
        format!(
            "max rel err {worst:.2e} over {probes} probes in {tensors} tensors ({} scalars), {secs:.1}s{}",
            query.scalar_count(),
            if offenders.is_empty() { String::new() } else { format!(", offenders {offenders:?}") }
        ),
    )
}

fn loss_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let b = rng.random_range(1..=8);
        let k = rng.random_range(1..=64);
        let d = rng.random_range(2..=32);
        let tau = rng.random_range(0.05..1.0);
        let mu = rng.random_range(0.05..0.95);
        let pair = rng.random_bool(0.5);
        let non_salient = rng.random_bool(0.5);
        let [zq, zk, qs, ks, qns, kns] = [0; 6].map(|_| unit_rows(&mut rng, b, d));
        let bank = unit_rows(&mut rng, k, d);

        let g = Graph::<f64>::new();
        let c = |r: &[Vec<f64>]| g.constant(&rows_tensor(r));
        let m = c(&bank);
        let info = g.scalar(info_nce(&g, c(&zq), c(&zk), m, tau).unwrap());
        let weights = LossWeights { temperature: tau, mu };
        let switches = LocalSwitches { negative_pair: pair, non_salient };
        let l = local_losses(&g, c(&qs), c(&ks), c(&qns), c(&kns), m, &weights, switches).unwrap();

        let want_s = oracle_local(&qs, &ks, &qns, &bank, tau, pair);
        let want_ns = oracle_local(&qns, &kns, &qs, &bank, tau, pair);
        let want_local = if non_salient { mu * want_s + (1.0 - mu) * want_ns } else { want_s };
        for (got, want) in [
            (info, oracle_info(&zq, &zk, &bank, tau)),
            (g.scalar(l.salient), want_s),
            (g.scalar(l.non_salient), want_ns),
            (g.scalar(l.local), want_local),
        ] {
            worst = worst.max(rel(got, want));
        }
    }
    (worst <= 1e-6, format!("worst relative error {worst:.2e} over 100 instances"))
}

fn mask_invariants() -> Verdict {
    let gains = [0.5, 1.0, 2.0, 4.0, 8.0];
    let c = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = Vec::new();
    let mut worst_pool: f64 = 0.0;
    for trial in 0..1000 {
        let b = rng.random_range(1..=3);
        let n = rng.random_range(1..=24);
        let scale = rng.random_range(0.05..10.0);
        let data: Vec<f64> = (0..b * n * c).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let f = Tensor::from_vec(&[b, n, c], data).unwrap();
        let params = Mhsam::new(c, 8, 1.0).unwrap().init_params::<f64, _>(&mut rng);

        let g = Graph::<f64>::new();
        let bound = params.bind(&g, LeafKind::Constant);
        let x = g.constant(&f);
        let mut previous: Option<Vec<f64>> = None;
        for &gain in &gains {
            let module = Mhsam::new(c, 8, gain).unwrap();
            let split = module.split_salient(&g, &bound, x, x).unwrap();
            let m = g.tensor(split.mask.values(&g)).to_vec();
            let rest = g.tensor(complement(split.mask).values(&g)).to_vec();
            if !m.iter().all(|&v| v > 0.0 && v < 1.0) {
                failures.push(format!("trial {trial} gain {gain}: mask left (0, 1)"));
            }
            if m.iter().zip(&rest).any(|(a, b)| a + b != 1.0) {
                failures.push(format!("trial {trial} gain {gain}: mask + complement != 1"));
            }
            let pooled = g.tensor(g.add(split.salient, split.non_salient));
            let mean = g.tensor(g.mean_axis(x, 1));
            worst_pool = worst_pool.max(pooled.max_abs_diff(&mean));
            if let Some(prev) = &previous {
                let ok = prev.iter().zip(&m).all(|(&u, &v)| (v - 0.5).abs() >= (u - 0.5).abs() && (u - 0.5) * (v - 0.5) >= 0.0);
                if !ok {
                    failures.push(format!("trial {trial} gain {gain}: polarization not monotone"));
                }
            }
            previous = Some(m);
        }
    }
    let pass = failures.is_empty() && worst_pool <= 1e-6;
    (
        pass,
        format!(
            "1000 maps x 5 gains, max |f_s + f_ns - GAP f| {worst_pool:.2e}, {} violations{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn closed_forms() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    let base = 0.996;
    for iter_max in [2usize, 100, 1250] {
        let start = dynamic_momentum(0, iter_max, base).unwrap();
        let end = dynamic_momentum(iter_max, iter_max, base).unwrap();
        let mid = dynamic_momentum(iter_max / 2, iter_max, base).unwrap();
        pass &= (start - base).abs() < 1e-12 && (end - 1.0).abs() < 1e-12 && (mid - (1.0 - (1.0 - base) / 2.0)).abs() < 1e-12;
    }
    notes.push(format!("momentum endpoints/midpoint {}", if pass { "ok" } else { "wrong" }));

    let g = Graph::<f64>::new();
    let q = g.constant(&Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap());
    let k = g.constant(&Tensor::from_vec(&[1, 2], vec![0.6, 0.8]).unwrap());
    let bank = g.constant(&Tensor::from_vec(&[1, 2], vec![0.6, -0.8]).unwrap());
    let symmetric = g.scalar(info_nce(&g, q, k, bank, 0.2).unwrap());
    let ln2_err = (symmetric - std::f64::consts::LN_2).abs();
    pass &= ln2_err <= 1e-9;
    notes.push(format!("symmetric logits |L - ln2| {ln2_err:.1e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let [qs, ks, qns, kns] = [0; 4].map(|_| unit_rows(&mut rng, 4, 6));
    let m = unit_rows(&mut rng, 10, 6);
    let c = |r: &[Vec<f64>]| g.constant(&rows_tensor(r));
    let weights = LossWeights { temperature: 0.2, mu: 0.5 };
    let l = local_losses(&g, c(&qs), c(&ks), c(&qns), c(&kns), c(&m), &weights, LocalSwitches::default()).unwrap();
    let (s, ns, local) = (g.scalar(l.salient), g.scalar(l.non_salient), g.scalar(l.local));
    let weighting_err = (local - (0.5 * s + 0.5 * ns)).abs();
    let oracle_err = rel(s, oracle_local(&qs, &ks, &qns, &m, 0.2, true)).max(rel(ns, oracle_local(&qns, &kns, &qs, &m, 0.2, true)));
    pass &= weighting_err <= 1e-12 && oracle_err <= 1e-9;
    notes.push(format!("mu = 0.5 weighting err {weighting_err:.1e}, term err {oracle_err:.1e}"));
    (pass, notes.join("; "))
}

/// Which local-loss terms a desk run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Variant {
    Baseline,
    Local { negative_pair: bool, non_salient: bool },
}

impl Variant {
    const FULL: Variant = Variant::Local { negative_pair: true, non_salient: true };

    fn label(self) -> String {
        match self {
            Variant::Baseline => "global-only".into(),
            Variant::Local { negative_pair, non_salient } => {
                format!("{}pair {}L_ns", if negative_pair { "+" } else { "-" }, if non_salient { "+" } else { "-" })
            }
        }
    }

    fn config(self, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig { seed, ..TrainConfig::desk() };
        match self {
            Variant::Baseline => cfg.use_local = false,
            Variant::Local { negative_pair, non_salient } => {
                cfg.negative_pair = negative_pair;
                cfg.non_salient = non_salient;
            }
        }
        cfg
    }
}

struct DeskRun {
    best_knn: f64,
    steps: Vec<StepRecord>,
    epoch_losses: Vec<f64>,
    seconds: f64,
}

fn desk_data(seed: u64) -> (Dataset, Dataset) {
    synth_train_test(&SynthConfig::default(), TEST_PER_CLASS, seed).unwrap()
}

fn desk_run(variant: Variant, seed: u64) -> skeattn::Result<DeskRun> {
    let start = Instant::now();
    let (train, test) = desk_data(seed);
    let cfg = variant.config(seed);
    let outcome = Trainer::new(&cfg, &train)?.run(&train, Some(Probe { train: &train, test: &test }), |_| {})?;
    let run = DeskRun {
        best_knn: outcome.best.map(|(_, r)| r.accuracy).unwrap_or(0.0),
        steps: outcome.steps,
        epoch_losses: outcome.epoch_losses,
        seconds: start.elapsed().as_secs_f64(),
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "  run {} seed {seed}: best k-NN {:.4} in {:.0}s", variant.label(), run.best_knn, run.seconds);
    Ok(run)
}

fn central_ablation(full: &[DeskRun], base: &[DeskRun]) -> Verdict {
    let seconds: f64 = full.iter().chain(base).map(|r| r.seconds).sum();
    let full_acc = median(full.iter().map(|r| r.best_knn).collect());
    let base_acc = median(base.iter().map(|r| r.best_knn).collect());
    let pass = full_acc >= base_acc + 0.02 && full_acc >= 0.90 && seconds <= 600.0;
    (
        pass,
        format!(
            "median k-NN full {full_acc:.4} vs global-only {base_acc:.4} (margin {:+.1} points, need >= +2 and full >= 90%), {seconds:.0}s for 6 runs",
            100.0 * (full_acc - base_acc)
        ),
    )
}

fn same_bits(a: &[StepRecord], b: &[StepRecord]) -> bool {
    let bits = |r: &StepRecord| {
        [r.momentum, r.lr, r.info, r.salient, r.non_salient, r.local, r.total].map(f64::to_bits)
    };
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.iter == y.iter && bits(x) == bits(y))
}

fn training_sanity(first: &DeskRun) -> Verdict {
    let losses = &first.epoch_losses;
    let (head, tail) = (losses[0], losses[losses.len() - 1]);
    let finite = first.steps.iter().all(|r| {
        [r.momentum, r.lr, r.info, r.salient, r.non_salient, r.local, r.total].iter().all(|v| v.is_finite())
    });
    let rerun = desk_run(Variant::FULL, SEEDS[0]);
    let identical = rerun.as_ref().map(|r| same_bits(&r.steps, &first.steps)).unwrap_or(false);
    (
        tail < head && finite && identical,
        format!(
            "epoch loss {head:.4} -> {tail:.4}, all finite {finite}, rerun bit-identical {identical} over {} steps",
            first.steps.len()
        ),
    )
}

fn memory_bank() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut fifo_failures = 0usize;
    let mut worst_norm: f64 = 0.0;
    for _ in 0..10_000 {
        let capacity = rng.random_range(1..=16);
        let dim = rng.random_range(1..=5);
        let mut bank = MemoryBank::empty(capacity, dim);
        let mut model: VecDeque<Vec<f32>> = VecDeque::new();
        for _ in 0..rng.random_range(1..=10) {
            let rows = rng.random_range(0..=2 * capacity);
            let batch = unit_rows(&mut rng, rows.max(1), dim);
            let batch = &batch[..rows];
            let flat: Vec<f32> = batch.iter().flatten().map(|&v| v as f32).collect();
            let arr = Array2::from_shape_vec((rows, dim), flat).unwrap();
            bank.enqueue(arr.view()).unwrap();
            for row in arr.rows() {
                model.push_back(row.to_vec());
                if model.len() > capacity {
                    model.pop_front();
                }
            }
            let stored = bank.ordered();
            let expected: Vec<f32> = model.iter().flatten().copied().collect();
            if stored.len() != expected.len() || stored.iter().zip(&expected).any(|(a, b)| a != b) {
                fifo_failures += 1;
            }
            for row in stored.rows() {
                worst_norm = worst_norm.max((row.dot(&row).sqrt() as f64 - 1.0).abs());
            }
        }
    }

    let g = Graph::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bank = g.param(&rows_tensor(&unit_rows(&mut rng, 16, 8)));
    let z = |rng: &mut ChaCha8Rng| g.param(&rows_tensor(&unit_rows(rng, 4, 8)));
    let (zq, zk, qs, ks, qns, kns) = (z(&mut rng), z(&mut rng), z(&mut rng), z(&mut rng), z(&mut rng), z(&mut rng));
    let info = info_nce(&g, zq, zk, bank, 0.2).unwrap();
    let l = local_losses(&g, qs, ks, qns, kns, bank, &LossWeights::default(), LocalSwitches::default()).unwrap();
    let grads = g.backward(g.add(info, l.local)).unwrap();
    let bank_grad_zero = grads.wrt(&g, bank).as_slice().iter().all(|&v| v == 0.0);
    let query_grad_live = grads.wrt(&g, zq).as_slice().iter().any(|&v| v != 0.0);

    (
        fifo_failures == 0 && worst_norm <= 1e-5 && bank_grad_zero && query_grad_live,
        format!(
            "10^4 sequences, {fifo_failures} FIFO mismatches, max | |m| - 1 | {worst_norm:.1e}, bank gradient zero {bank_grad_zero}"
        ),
    )
}

fn frozen_branch() -> Verdict {
    let train = synth_generate(&SynthConfig { samples_per_class: 8, ..SynthConfig::default() }, 4).unwrap();
    let cfg = TrainConfig { batch_size: 8, queue_size: 64, epochs: 2, lr_drop_epoch: 1, ..TrainConfig::desk() };
    let mut trainer = Trainer::new(&cfg, &train).unwrap();
    let mut steps = 0usize;
    let mut leaks = Vec::new();
    for epoch in 0..cfg.epochs {
        let order = trainer.epoch_order(epoch, train.len());
        for chunk in order.chunks_exact(cfg.batch_size) {
            let batch: Vec<&SkeletonSequence> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let (views, _) = make_views::<f32>(&batch, chunk, &trainer.cfg, epoch).unwrap();
            let g = Graph::<f32>::new();
            let query = trainer.state.query.bind(&g, LeafKind::Trainable);
            let key = trainer.state.key.bind(&g, LeafKind::Trainable);
            let bank = g.param(&trainer.state.bank.tensor());
            let objective = trainer.model.objective_with_bank(&g, &query, &key, &views, bank).unwrap();
            let grads = g.backward(objective.total).unwrap();
            for (name, grad) in named_grads(&g, &key, &grads) {
                if grad.as_slice().iter().any(|&v| v != 0.0) {
                    leaks.push(format!("step {steps}: key `{name}`"));
                }
            }
            if grads.wrt(&g, bank).as_slice().iter().any(|&v| v != 0.0) {
                leaks.push(format!("step {steps}: bank"));
            }
            if named_grads(&g, &query, &grads).is_empty() {
                leaks.push(format!("step {steps}: query got no gradient"));
            }
            drop(g);
            trainer.step(&train, chunk, epoch).unwrap();
            steps += 1;
        }
    }

    let mut key = ParamStore::<f64>::new();
    key.insert("a", Tensor::from_vec(&[1], vec![0.25]).unwrap());
    key.insert("b", Tensor::from_vec(&[1], vec![-1.5]).unwrap());
    let mut query = ParamStore::<f64>::new();
    query.insert("a", Tensor::from_vec(&[1], vec![2.0]).unwrap());
    query.insert("b", Tensor::from_vec(&[1], vec![0.5]).unwrap());
    let m: f64 = 0.9;
    for _ in 0..5 {
        momentum_update(&mut key, &query, m).unwrap();
    }
    // k_n = q + m^n (k_0 - q) for a fixed query.
    let want_a = 2.0 + m.powi(5) * (0.25 - 2.0);
    let want_b = 0.5 + m.powi(5) * (-1.5 - 0.5);
    let ema_err = (key.get("a").unwrap().as_slice()[0] - want_a).abs().max((key.get("b").unwrap().as_slice()[0] - want_b).abs());

    (
        leaks.is_empty() && ema_err <= 1e-5,
        format!(
            "{steps} steps with no gradient into key branch or bank{}, EMA toy err {ema_err:.1e}",
            leaks.first().map(|l| format!(" (leak: {l})")).unwrap_or_default()
        ),
    )
}

fn loss_design_ablation(full: &[DeskRun], ablated: &[(Variant, Vec<DeskRun>)]) -> Verdict {
    let mut traces: Vec<(String, &[StepRecord])> = vec![(Variant::FULL.label(), &full[0].steps)];
    traces.extend(ablated.iter().map(|(v, runs)| (v.label(), runs[0].steps.as_slice())));
    let mut distinct = true;
    for i in 0..traces.len() {
        for j in i + 1..traces.len() {
            distinct &= !same_bits(traces[i].1, traces[j].1);
        }
    }
    let full_acc = median(full.iter().map(|r| r.best_knn).collect());
    let mut pass = distinct;
    let mut parts = vec![format!("{} {full_acc:.4}", Variant::FULL.label())];
    for (v, runs) in ablated {
        let acc = median(runs.iter().map(|r| r.best_knn).collect());
        pass &= full_acc >= acc - 0.01;
        parts.push(format!("{} {acc:.4}", v.label()));
    }
    (pass, format!("median k-NN {}; distinct traces {distinct}", parts.join(", ")))
}

fn runs_or_fail(variant: Variant) -> Result<Vec<DeskRun>, String> {
    SEEDS.iter().map(|&s| desk_run(variant, s)).collect::<skeattn::Result<Vec<_>>>().map_err(|e| e.to_string())
}

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    let mut record = |id: usize, name: &str, verdict: Verdict| {
        report(id, name, &verdict);
        if !verdict.0 {
            failed.push(id);
        }
    };

    record(1, "gradient correctness", guarded(gradient_correctness));
    record(2, "loss oracle equivalence", guarded(loss_oracles));
    record(3, "mask invariants", guarded(mask_invariants));
    record(4, "closed forms", guarded(closed_forms));

    let full = runs_or_fail(Variant::FULL);
    let base = runs_or_fail(Variant::Baseline);
    match (&full, &base) {
        (Ok(f), Ok(b)) => record(5, "central ablation", guarded(|| central_ablation(f, b))),
        (Err(e), _) | (_, Err(e)) => record(5, "central ablation", (false, format!("run failed: {e}"))),
    }
    match &full {
        Ok(f) => record(6, "training sanity", guarded(|| training_sanity(&f[0]))),
        Err(e) => record(6, "training sanity", (false, format!("run failed: {e}"))),
    }

    record(7, "memory bank", guarded(memory_bank));
    record(8, "frozen branch", guarded(frozen_branch));

    let ablated: Result<Vec<(Variant, Vec<DeskRun>)>, String> = [(true, false), (false, true), (false, false)]
        .into_iter()
        .map(|(negative_pair, non_salient)| {
            let v = Variant::Local { negative_pair, non_salient };
            runs_or_fail(v).map(|r| (v, r))
        })
        .collect();
    match (&full, &ablated) {
        (Ok(f), Ok(a)) => record(9, "loss-design ablation", guarded(|| loss_design_ablation(f, a))),
        (Err(e), _) | (_, Err(e)) => record(9, "loss-design ablation", (false, format!("run failed: {e}"))),
    }

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
