//! The binary's exit codes, its equivalence with direct library calls and its
//! run-to-run determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use attnet::data::Sequence;
use attnet::evaluation::{describe_sequence, evaluate_sequence, folds_csv};
use attnet::model::{encode_checkpoint, load_checkpoint, ModelState};
use attnet::retrieval::{build_map, encode_map};
use attnet::run_config::RunConfig;
use attnet::training::{train, LabeledSequence, Silent};

const CONFIG: &str = "\
data_root = data
sequences = 00,01
output_dir = out
width = 64
height = 8
preset = toy
encoder_depth = 2
attention_depth = 1
descriptor_dim = 32
epochs = 2
pairs_per_epoch = 3
seed = 5
margin = 0.85
r_th = 6
min_frame_gap = 100
fps_frames = 3
fps_warmup = 1
";

fn attnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnet"))
        .args(args)
        .current_dir(dir)
        .env_remove(attnet::run_config::DATA_ROOT_ENV)
        .output()
        .expect("spawn attnet")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = attnet(dir, args);
    assert!(
        out.status.success(),
        "attnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Two synthetic sequences and a run config in a fresh directory.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["synth", "--out", "data", "--sequences", "2", "--seed", "3", "--lap-offset", "0.5"],
    );
    fs::write(dir.path().join("run.cfg"), CONFIG).unwrap();
    dir
}

fn load_cfg(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&dir.join("run.cfg")).unwrap();
    cfg.data_root = Some(dir.join("data"));
    cfg
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(attnet(d, &[]).status.code(), Some(2));
    assert_eq!(attnet(d, &["frobnicate"]).status.code(), Some(2));
    let missing = attnet(d, &["train", "--config", "nope.cfg"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error[io]:"));
    assert_eq!(attnet(d, &["project", "nope.bin", "--out", "x"]).status.code(), Some(2));

    fs::write(d.join("bad.cfg"), "seed = 1\nr_th = 6\n").unwrap();
    let out = attnet(d, &["eval", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("margin"));
}

#[test]
fn runtime_failures_exit_1() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("broken.adlw"), b"ADLW but not really").unwrap();
    let out = attnet(d, &["build-map", "--config", "run.cfg", "--checkpoint", "broken.adlw", "--sequence", "00"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[parse]:"));
}

#[test]
fn commands_match_library_calls() {
    let dir = workspace();
    let d = dir.path();
    let cfg = load_cfg(d);
    let root = cfg.data_root.clone().unwrap();
    let open = |tag: &str| {
        LabeledSequence::new(Sequence::open_kitti(&root, tag).unwrap(), cfg.protocol.r_th, cfg.protocol.min_frame_gap).unwrap()
    };
    let sequences = [open("00"), open("01")];

    ok(d, &["train", "--config", "run.cfg"]);
    let state = ModelState::new(cfg.model_config().unwrap(), cfg.train.seed).unwrap();
    let (state, _) = train(state, &[&sequences[0], &sequences[1]], &cfg.projection, &cfg.train, &mut Silent).unwrap();
    assert_eq!(fs::read(d.join("out/model.adlw")).unwrap(), encode_checkpoint(&state));

    // downstream commands read the f32 checkpoint, so the library side does too
    let state = load_checkpoint(&d.join("out/model.adlw")).unwrap();
    ok(d, &["build-map", "--config", "run.cfg", "--checkpoint", "out/model.adlw", "--sequence", "01"]);
    let map = build_map(describe_sequence(&state, &sequences[1].sequence, &cfg.projection).unwrap(), "01").unwrap();
    assert_eq!(fs::read(d.join("out/maps/01.adlm")).unwrap(), encode_map(&map));

    ok(d, &["eval", "--config", "run.cfg", "--checkpoint", "out/model.adlw", "--map", "out/maps/01.adlm"]);
    let metrics: Vec<_> = sequences
        .iter()
        .map(|s| evaluate_sequence(&state, s, &cfg.projection, &cfg.protocol).unwrap().metrics)
        .collect();
    assert_eq!(fs::read_to_string(d.join("out/folds.csv")).unwrap(), folds_csv(&metrics));

    let scan = "data/sequences/01/velodyne/000120.bin";
    let out = ok(d, &["query", "--config", "run.cfg", "--checkpoint", "out/model.adlw", "--map", "out/maps/01.adlm", "--scan", scan, "-n", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines().skip(1);
    assert_eq!(lines.next(), Some("1,120,1.000000"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn identical_runs_give_identical_artifacts() {
    let run = || {
        let dir = workspace();
        let d = dir.path();
        ok(d, &["train", "--config", "run.cfg"]);
        ok(d, &["build-map", "--config", "run.cfg", "--checkpoint", "out/model.adlw", "--sequence", "00"]);
        ok(d, &["eval", "--config", "run.cfg", "--checkpoint", "out/model.adlw"]);
        ["manifest-synth.txt"]
            .iter()
            .map(|f| fs::read(d.join("data").join(f)).unwrap())
            .chain(
                ["manifest-train.txt", "manifest-build-map.txt", "manifest-eval.txt", "train.log", "recall_curve.csv"]
                    .iter()
                    .map(|f| fs::read(d.join("out").join(f)).unwrap()),
            )
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn every_command_writes_a_manifest() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["train", "--config", "run.cfg", "--checkpoint-every", "1"]);
    ok(d, &["bench", "--config", "run.cfg"]);
    ok(d, &["project", "data/sequences/00", "--out", "ranges", "--width", "64", "--height", "8"]);
    let train = fs::read_to_string(d.join("out/manifest-train.txt")).unwrap();
    assert!(train.starts_with("# attnet train\n[config]\n"));
    for artifact in ["model.adlw", "train.log", "checkpoints/epoch-001.adlw", "checkpoints/epoch-002.adlw"] {
        assert!(train.lines().any(|l| l.ends_with(&format!("  {artifact}"))), "{artifact} missing:\n{train}");
    }
    assert!(fs::read_to_string(d.join("out/manifest-bench.txt")).unwrap().contains("bench.txt"));
    let project = fs::read_to_string(d.join("ranges/manifest-project.txt")).unwrap();
    assert_eq!(project.lines().filter(|l| l.ends_with(".arng")).count(), 450);
}
