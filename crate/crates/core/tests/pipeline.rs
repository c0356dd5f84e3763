use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use docwarp::dewarp::Predictor;
use docwarp::synth::{generate_dataset, read_dataset, Dataset, ImageSource, SynthConfig};
use docwarp::train::{evaluate, read_log, train, TrainConfig, LOG_HEADER};

fn small_dataset(dir: &Path, count: usize, seed: u64) -> Dataset {
    let cfg = SynthConfig {
        size: 64,
        ..SynthConfig::default()
    };
    generate_dataset(dir, count, seed, &cfg, &ImageSource::Builtin, &ImageSource::Builtin).unwrap();
    read_dataset(dir).unwrap()
}

fn tiny(data: &Path, out: PathBuf) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 2,
        batch_size: 2,
        learning_rate: 1e-3,
        seed: 7,
        val_fraction: 0.25,
        data_path: data.to_path_buf(),
        out_dir: out,
        ..TrainConfig::default()
    };
    cfg.model.input_size = 32;
    cfg.model.scale = 0.125;
    cfg
}

#[test]
fn zero_epochs_writes_initial_checkpoint_and_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir.path().join("d"), 2, 1);
    let cfg = TrainConfig {
        epochs: 0,
        ..tiny(data.dir(), dir.path().join("run"))
    };
    let out = train(&cfg, &data, |_| {}).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.checkpoint, cfg.out_dir.join("initial.gbsu"));
    assert!(!cfg.out_dir.join("final.gbsu").exists());
    assert_eq!(fs::read_to_string(cfg.log_file()).unwrap().trim_end(), LOG_HEADER);
    Predictor::load(&out.checkpoint).unwrap();
}

#[test]
fn log_and_periodic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir.path().join("d"), 4, 2);
    let cfg = TrainConfig {
        checkpoint_every: 2,
        val_fraction: 0.0,
        ..tiny(data.dir(), dir.path().join("run"))
    };
    let out = train(&cfg, &data, |_| {}).unwrap();
    assert_eq!(out.log.len(), 4);
    assert_eq!(read_log(&cfg.log_file()).unwrap(), out.log);
    for name in [
        "initial.gbsu",
        "step_000002.gbsu",
        "step_000004.gbsu",
        "final.gbsu",
        "train.config",
        "final.config",
    ] {
        assert!(cfg.out_dir.join(name).exists(), "{name}");
    }
    let resolved = TrainConfig {
        log_path: Some(cfg.log_file()),
        ..cfg.clone()
    };
    assert_eq!(
        TrainConfig::parse(&fs::read_to_string(cfg.out_dir.join("train.config")).unwrap()).unwrap(),
        resolved
    );
    assert!(out.log.iter().all(|r| r.combined_loss.is_finite() && r.wall_time >= 0.0));
}

#[test]
fn max_steps_stops_mid_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir.path().join("d"), 4, 2);
    let cfg = TrainConfig {
        max_steps: 3,
        epochs: 10,
        val_fraction: 0.0,
        ..tiny(data.dir(), dir.path().join("run"))
    };
    let out = train(&cfg, &data, |_| {}).unwrap();
    assert_eq!(out.log.len(), 3);
    assert_eq!(out.log.last().unwrap().epoch, 1);
}

#[test]
fn same_seed_same_run_and_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir.path().join("d"), 4, 3);
    let a = train(&tiny(data.dir(), dir.path().join("a")), &data, |_| {}).unwrap();
    let b = train(&tiny(data.dir(), dir.path().join("b")), &data, |_| {}).unwrap();
    assert!(a.store.same_values(&b.store));
    let strip = |v: &[docwarp::train::TrainLogRecord]| v.iter().map(|r| (r.step, r.combined_loss)).collect::<Vec<_>>();
    assert_eq!(strip(&a.log), strip(&b.log));
    assert_eq!(a.val_indices.len(), 1);

    let c = train(
        &TrainConfig {
            seed: 8,
            ..tiny(data.dir(), dir.path().join("c"))
        },
        &data,
        |_| {},
    )
    .unwrap();
    assert!(!a.store.same_values(&c.store));

    let idx: Vec<usize> = (0..data.len()).collect();
    let loaded = Predictor::load(&a.checkpoint).unwrap();
    let from_disk = evaluate(&loaded, &data, &idx, true).unwrap();
    let in_memory = Predictor::Model {
        net: a.network,
        store: a.store,
    };
    assert_eq!(evaluate(&in_memory, &data, &idx, true).unwrap().rows, from_disk.rows);
}

#[test]
fn diverging_run_writes_diagnostic_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir.path().join("d"), 4, 4);
    let out = dir.path().join("run");
    let r = Command::new(env!("CARGO_BIN_EXE_docwarp"))
        .args(["train", "--data", data.dir().to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(["--scale", "0.125", "--input-size", "32", "--batch-size", "2", "--epochs", "5"])
        .args(["--lr", "1e30", "--set", "optimizer=sgd", "--set", "val_fraction=0"])
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("diagnostic.gbsu").exists());
    assert!(out.join("diagnostic.config").exists());
    assert!(!out.join("final.gbsu").exists());
}

#[test]
fn train_cli_rejects_bad_settings() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(&dir.path().join("d"), 1, 5);
    let run = |extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_docwarp"))
            .args(["train", "--data", data.dir().to_str().unwrap()])
            .args(["--out", dir.path().join("run").to_str().unwrap()])
            .args(extra)
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(run(&["--input-size", "48"]), Some(1));
    assert_eq!(run(&["--set", "no_such_key=1"]), Some(1));
    assert_eq!(run(&["--preset", "bogus"]), Some(1));
    assert_eq!(run(&["--epochs", "0", "--input-size", "32", "--scale", "0.125"]), Some(0));
}
