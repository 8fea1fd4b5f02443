use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use ndarray::Array4;

use skeattn::skeleton::{save_dataset, Dataset, SkeletonSequence, SkeletonTopology, Split};
use skeattn::tensor::read_tensor;

fn skeattn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skeattn")).current_dir(dir).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const TINY: &str = "preset = desk\nepochs = 2\nlr_drop_epoch = 1\nbatch_size = 8\nqueue_size = 32\nknn_every = 1\n";

fn pretrained(dir: &Path) {
    write(dir, "tiny.cfg", TINY);
    write(dir, "synth.cfg", "samples_per_class = 6\ntest_per_class = 3\n");
    let out = skeattn(dir, &["synth", "--config", "synth.cfg", "--out", "train.skd", "--test-out", "test.skd"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = skeattn(dir, &["pretrain", "--config", "tiny.cfg", "--out", "run", "--data", "train.skd", "--test", "test.skd"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_workflow_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pretrained(d);
    for f in ["loss.csv", "knn.csv", "mix_log.csv", "checkpoint/manifest.txt", "best/manifest.txt"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let loss = std::fs::read_to_string(d.join("run/loss.csv")).unwrap();
    assert!(loss.starts_with("iter,M,lr,L_info,L_s,L_ns,L_local,L\n"));

    let data = ["--checkpoint", "run/best", "--data", "train.skd", "--test", "test.skd"];
    for protocol in ["knn", "linear"] {
        let out = skeattn(d, &[&["eval", protocol][..], &data].concat());
        assert_eq!(code(&out), 0, "{protocol}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("accuracy"));
    }
    let out = skeattn(d, &[&["eval", "finetune"][..], &data, &["--label-fraction", "0.5"]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("semi-finetune"));

    let out = skeattn(d, &["export-embeddings", "--checkpoint", "run/best", "--data", "test.skd", "--out", "emb.skt"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let emb = read_tensor(d.join("emb.skt")).unwrap();
    assert_eq!(emb.shape(), &[12, 64]);

    let out = skeattn(d, &["dump-masks", "--checkpoint", "run/best", "--data", "test.skd", "--out", "masks.skt"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_tensor(d.join("masks.skt")).unwrap().shape()[0], 12);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "tiny.cfg", TINY);
    write(d, "typo.cfg", "preset = desk\nlambdaa = 2\n");
    let out = skeattn(d, &["pretrain", "--config", "typo.cfg", "--out", "run"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambdaa"));
    let out = skeattn(d, &["pretrain", "--config", "tiny.cfg", "--out", "run", "--set", "heads=7"]);
    assert_eq!(code(&out), 2);
    let out = skeattn(d, &["pretrain", "--config", "tiny.cfg", "--out", "run", "--set", "lambda=-1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_stream_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pretrained(d);
    let out = skeattn(d, &["eval", "knn", "--checkpoint", "run/best", "--data", "train.skd", "--stream", "velocity"]);
    assert_eq!(code(&out), 2);
    let out = skeattn(d, &["eval", "knn", "--checkpoint", "nowhere", "--data", "train.skd"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn overflowing_coordinates_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let topo = Arc::new(SkeletonTopology::desk9());
    let samples = (0..16)
        .map(|i| {
            let coords = Array4::<f32>::from_elem((3, 16, 9, 1), 1e36 * (1.0 + i as f32));
            SkeletonSequence::new(coords, topo.clone(), Some(i % 2)).unwrap()
        })
        .collect();
    save_dataset(&Dataset::new(samples, 2, Split::Train).unwrap(), d.join("huge.skd")).unwrap();
    write(d, "tiny.cfg", TINY);
    let out = skeattn(d, &["pretrain", "--config", "tiny.cfg", "--out", "run", "--data", "huge.skd"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
