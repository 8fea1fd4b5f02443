use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;

use skeattn::attention::SoftMask;
use skeattn::augment::{mix_augment, normal_augment, sample_rng};
use skeattn::autodiff::{Graph, LeafKind};
use skeattn::encoder::Encoder;
use skeattn::skeleton::{
    load_dataset, save_dataset, synth_generate_split, synth_train_test, Dataset, SkeletonTopology, Split, Stream,
    SynthConfig,
};
use skeattn::tensor::{write_tensor, Tensor};
use skeattn::train::{
    embed_dataset, finetune, knn_evaluate, linear_probe, load_checkpoint, plain_input, save_checkpoint,
    synth_config_from, write_logs, Checkpoint, EvalReport, KeyValues, Probe, SkeAttn, TrainConfig, Trainer,
};
use skeattn::Error;

#[derive(Parser)]
#[command(name = "skeattn", version, about = "Self-supervised skeleton contrastive pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain an encoder without labels.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training set (SKD1). Defaults to the synthetic desk set seeded by the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Labeled test set for the periodic k-NN probe.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Override any config key, as `key=value`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint with one of the downstream protocols.
    Eval {
        protocol: Protocol,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        label_fraction: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Write `GAP(E(x))` for every sample as an `(N, C)` SKT1 tensor.
    ExportEmbeddings {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic labeled dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the matching test split here.
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Write the attention masks of every sample as an `(N, n, C)` SKT1 tensor.
    DumpMasks {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the first samples before and after augmentation, for inspection.
    Augment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Held-out split; without it, a stratified fifth of `--data` is held out.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Input stream; defaults to the one the checkpoint was trained on.
    #[arg(long)]
    stream: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Knn,
    Linear,
    Finetune,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidConfig(_) | Error::UnknownStream(_) | Error::HeadDivisibility { .. }) => 2,
        Some(
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::ZeroNorm { .. } | Error::ToleranceExceeded { .. },
        ) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Pretrain { config, out, data, test, overrides } => pretrain_cmd(&config, &out, data, test, &overrides),
        Command::Eval { protocol, data, label_fraction, k } => eval_cmd(protocol, &data, label_fraction, k),
        Command::ExportEmbeddings { data, out } => {
            let (ckpt, model) = open_checkpoint(&data.checkpoint)?;
            let ds = load(&data.data, &ckpt.config)?;
            let z = embed_dataset(&model, &ckpt.state.query, &ds, stream_of(&data, &ckpt.config)?)?;
            write_tensor(&Tensor::from_array(z.into_dyn()), &out)?;
            println!("wrote {} embeddings to {}", ds.len(), out.display());
            Ok(())
        }
        Command::Synth { config, out, test_out } => synth_cmd(config.as_deref(), &out, test_out.as_deref()),
        Command::DumpMasks { data, out } => dump_masks(&data, &out),
        Command::Augment { config, data, out, count } => augment_cmd(&config, &data, &out, count),
    }
}

fn load(path: &Path, cfg: &TrainConfig) -> anyhow::Result<Dataset> {
    let topo = Arc::new(SkeletonTopology::preset(&cfg.topology)?);
    load_dataset(path, Some(topo)).with_context(|| format!("loading {}", path.display()))
}

fn open_checkpoint(dir: &Path) -> anyhow::Result<(Checkpoint, SkeAttn)> {
    let ckpt = load_checkpoint(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    let model = SkeAttn::new(&ckpt.config, &SkeletonTopology::preset(&ckpt.config.topology)?)?;
    Ok((ckpt, model))
}

fn stream_of(args: &DataArgs, cfg: &TrainConfig) -> anyhow::Result<Stream> {
    Ok(match &args.stream {
        Some(s) => s.parse()?,
        None => cfg.stream,
    })
}

/// Holds out `floor(n / 5)` samples of every class.
fn holdout_split(ds: &Dataset, seed: u64) -> anyhow::Result<(Dataset, Dataset)> {
    let labels = ds.labels()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in 0..ds.class_count {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let cut = members.len() / 5;
        test.extend_from_slice(&members[..cut]);
        train.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let mut test_ds = ds.subset(&test);
    test_ds.split = Split::Test;
    Ok((ds.subset(&train), test_ds))
}

fn pretrain_cmd(
    config: &Path,
    out: &Path,
    data: Option<PathBuf>,
    test: Option<PathBuf>,
    overrides: &[String],
) -> anyhow::Result<()> {
    let mut cfg = TrainConfig::load(config)?;
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override `{kv}` is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    let (train, probe_set) = match data {
        Some(path) => {
            let train = load(&path, &cfg)?;
            let probe = test.map(|p| load(&p, &cfg)).transpose()?;
            (train, probe)
        }
        None => {
            let synth = SynthConfig { topology: cfg.topology.clone(), frames: cfg.augment.window_size, ..SynthConfig::default() };
            let (train, test) = synth_train_test(&synth, 50, cfg.seed)?;
            (train, Some(test))
        }
    };
    fs::create_dir_all(out)?;
    let mut trainer = Trainer::new(&cfg, &train)?;
    trainer.dump_dir = Some(out.to_path_buf());
    let per_epoch = trainer.steps_per_epoch();
    let probe = probe_set.as_ref().map(|t| Probe { train: &train, test: t });
    let outcome = trainer.run(&train, probe, |r| {
        if (r.iter + 1) % per_epoch == 0 {
            eprintln!("epoch {:>3}  iter {:>6}  loss {:.4}  lr {}", (r.iter + 1) / per_epoch, r.iter + 1, r.total, r.lr);
        }
    })?;
    write_logs(out, &outcome)?;
    let epochs = cfg.epochs;
    save_checkpoint(
        out.join("checkpoint"),
        &Checkpoint { config: cfg.clone(), state: outcome.state.clone(), epoch: epochs, knn_accuracy: None },
    )?;
    let (best_epoch, best_acc) = match &outcome.best {
        Some((e, r)) => (*e, Some(r.accuracy)),
        None => (epochs, None),
    };
    let mut best_state = outcome.state.clone();
    best_state.query = outcome.best_params.clone();
    save_checkpoint(
        out.join("best"),
        &Checkpoint { config: cfg, state: best_state, epoch: best_epoch, knn_accuracy: best_acc },
    )?;
    for (epoch, report) in &outcome.knn_history {
        println!("epoch {epoch}: {report}");
    }
    if let Some(acc) = best_acc {
        println!("best k-NN accuracy {acc:.4} at epoch {best_epoch}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn eval_cmd(protocol: Protocol, args: &DataArgs, label_fraction: Option<f64>, k: Option<usize>) -> anyhow::Result<()> {
    let (ckpt, model) = open_checkpoint(&args.checkpoint)?;
    let cfg = &ckpt.config;
    let data = load(&args.data, cfg)?;
    let (train, test) = match &args.test {
        Some(p) => (data, load(p, cfg)?),
        None => holdout_split(&data, cfg.seed)?,
    };
    let stream = stream_of(args, cfg)?;
    let report: EvalReport = match protocol {
        Protocol::Knn => {
            knn_evaluate(&model, &ckpt.state.query, &train, &test, stream, k.unwrap_or(cfg.knn_k), None)?
        }
        Protocol::Linear => linear_probe(&model, &ckpt.state.query, &train, &test, stream, &cfg.probe, cfg.seed)?.0,
        Protocol::Finetune => {
            let mut ft = cfg.finetune.clone();
            if let Some(f) = label_fraction {
                ft.label_fraction = f;
            }
            finetune(&model, &ckpt.state.query, &train, &test, stream, &ft, cfg.seed)?.0
        }
    };
    println!("{report}");
    Ok(())
}

fn synth_cmd(config: Option<&Path>, out: &Path, test_out: Option<&Path>) -> anyhow::Result<()> {
    let (cfg, seed, test_per_class) = match config {
        Some(path) => synth_config_from(&KeyValues::load(path)?)?,
        None => (SynthConfig::default(), 0, 50),
    };
    let train = synth_generate_split(&cfg, seed, Split::Train)?;
    save_dataset(&train, out)?;
    println!("wrote {} samples to {}", train.len(), out.display());
    if let Some(path) = test_out {
        let (_, test) = synth_train_test(&cfg, test_per_class, seed)?;
        save_dataset(&test, path)?;
        println!("wrote {} samples to {}", test.len(), path.display());
    }
    Ok(())
}

fn dump_masks(args: &DataArgs, out: &Path) -> anyhow::Result<()> {
    let (ckpt, model) = open_checkpoint(&args.checkpoint)?;
    let ds = load(&args.data, &ckpt.config)?;
    let stream = stream_of(args, &ckpt.config)?;
    let mut parts = Vec::new();
    for chunk in ds.samples.chunks(64) {
        let g = Graph::<f32>::new();
        let params = ckpt.state.query.bind(&g, LeafKind::Constant);
        let refs: Vec<_> = chunk.iter().collect();
        let x = g.constant(&plain_input(&refs, stream)?);
        let f = model.encoder.encode(&g, &params, x)?;
        let mask: SoftMask = model.mhsam.compute_mask(&g, &params, f)?;
        let m = g.value(mask.values(&g)).clone();
        parts.push(m.into_dimensionality::<ndarray::Ix3>()?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let all: Array3<f32> = ndarray::concatenate(Axis(0), &views)?;
    let shape = all.dim();
    write_tensor(&Tensor::from_array(all.into_dyn()), out)?;
    println!("wrote masks {shape:?} to {}", out.display());
    Ok(())
}

fn augment_cmd(config: &Path, data: &Path, out: &Path, count: usize) -> anyhow::Result<()> {
    let cfg = TrainConfig::load(config)?;
    let ds = load(data, &cfg)?;
    let n = count.min(ds.len());
    if n == 0 {
        return Err(Error::EmptyTrainSet.into());
    }
    let mut queries = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    let mut rngs = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = sample_rng(cfg.seed, 0, i as u64);
        let (q, k) = normal_augment(&ds.samples[i], &cfg.augment, &mut rng)?;
        queries.push(q);
        keys.push(k);
        rngs.push(rng);
    }
    let mut mixed = Vec::with_capacity(n);
    let mut log = String::from("sample,groups,start,len\n");
    for (i, rng) in rngs.iter_mut().enumerate() {
        let (m, rec) = mix_augment(&queries[i], &queries[(i + 1) % n], &cfg.augment.mix, rng)?;
        let groups: Vec<String> = rec.groups.iter().map(|g| g.to_string()).collect();
        log.push_str(&format!("{i},{},{},{}\n", groups.join(" "), rec.start, rec.len));
        mixed.push(m);
    }
    fs::create_dir_all(out)?;
    let write = |name: &str, samples: Vec<_>| -> anyhow::Result<()> {
        save_dataset(&Dataset::new(samples, ds.class_count, Split::Train)?, out.join(name))?;
        Ok(())
    };
    write("original.skd", ds.samples[..n].to_vec())?;
    write("query.skd", queries)?;
    write("key.skd", keys)?;
    write("mixed.skd", mixed)?;
    fs::write(out.join("mix_log.csv"), log)?;
    println!("wrote {n} augmented samples to {}", out.display());
    Ok(())
}
