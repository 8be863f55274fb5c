use std::fs;
use std::path::Path;
use std::process::Command;

use aift_cli::commands::{CHECKPOINT_FILE, CURVE_FILE, SCORES_FILE, SUMMARY_FILE, TRAIN_LOG_FILE};
use aift_cli::config::ECHO_FILE;

fn aift(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_aift")).args(args).env_remove("AIFT_SEED").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = aift(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(root: &Path) -> String {
    let data = root.join("data");
    ok(&[
        "synth",
        "--out",
        p(&data),
        "--normal",
        "24",
        "--defect",
        "6",
        "--test-normal",
        "6",
        "--patch-size",
        "16",
        "--seed",
        "3",
    ]);
    data.to_str().unwrap().to_string()
}

#[test]
fn end_to_end_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let run = tmp.path().join("run");
    ok(&[
        "train",
        "--data",
        &data,
        "--out",
        p(&run),
        "--epochs",
        "2",
        "--batch",
        "8",
        "--critic-iters",
        "2",
        "--widths",
        "2,4,4,8",
        "--patch-size",
        "16",
        "--checkpoint-every",
        "1",
    ]);
    for f in [CHECKPOINT_FILE, TRAIN_LOG_FILE, ECHO_FILE, "checkpoints/epoch_0001.ckpt", "checkpoints/epoch_0002.ckpt"]
    {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let log = fs::read_to_string(run.join(TRAIN_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(fs::read_to_string(run.join(ECHO_FILE)).unwrap().contains("epochs = 2"));

    let ckpt = run.join(CHECKPOINT_FILE);
    let det = tmp.path().join("det");
    ok(&["detect", "--ckpt", p(&ckpt), "--data", &data, "--out", p(&det)]);
    let scores = fs::read_to_string(det.join(SCORES_FILE)).unwrap();
    assert_eq!(scores.lines().count(), 13);
    assert!(det.join("maps/defect__00000.csv").is_file());
    assert!(det.join("maps/defect__00000.pgm").is_file());

    let ev = tmp.path().join("eval");
    ok(&["eval", "--maps", p(&det), "--gt", &data, "--out", p(&ev)]);
    let curve = fs::read_to_string(ev.join(CURVE_FILE)).unwrap();
    assert_eq!(curve.lines().count(), 100);
    let summary = fs::read_to_string(ev.join(SUMMARY_FILE)).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "12");
    for v in &row[2..] {
        let v: f64 = v.parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    let only = tmp.path().join("auroc");
    ok(&["eval", "--scores", p(&det.join(SCORES_FILE)), "--gt", &data, "--out", p(&only)]);
    let line = fs::read_to_string(only.join(SUMMARY_FILE)).unwrap();
    assert!(line.lines().nth(1).unwrap().contains(",NA,NA,NA,NA,"));

    let tf = tmp.path().join("tf");
    let image = Path::new(&data).join("defect/00000.pgm");
    ok(&["transform", "--ckpt", p(&ckpt), "--image", p(&image), "--out", p(&tf)]);
    for f in ["image.pgm", "frequency.pgm", "generated_frequency.pgm", "generated_image.pgm"] {
        assert!(tf.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let out = tmp.path().join("x");

    let code = |args: &[&str]| aift(args).status.code().unwrap();
    assert_eq!(code(&["synth", "--out", p(&out), "--normal", "0"]), 2);
    assert_eq!(code(&["train", "--data", &data, "--out", p(&out), "--loss", "bogus"]), 2);
    assert_eq!(code(&["train", "--data", &data, "--out", p(&out), "--batch", "100", "--patch-size", "16"]), 2);
    assert_eq!(code(&["detect", "--ckpt", p(&tmp.path().join("missing.ckpt")), "--data", &data, "--out", p(&out)]), 3);

    let junk = tmp.path().join("junk.ckpt");
    fs::write(&junk, b"AIFT not really").unwrap();
    assert_eq!(code(&["detect", "--ckpt", p(&junk), "--data", &data, "--out", p(&out)]), 4);

    let cfg = tmp.path().join("bad.conf");
    fs::write(&cfg, "epochs = 2\nno-such-key = 1\n").unwrap();
    assert_eq!(code(&["train", "--data", &data, "--out", p(&out), "--config", p(&cfg)]), 2);

    // The data directory is not empty; refuse without --force.
    assert_eq!(code(&["synth", "--out", &data]), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let cfg = tmp.path().join("train.conf");
    fs::write(
        &cfg,
        "# tiny run\nepochs = 1\nbatch = 8\ncritic_iters = 1\nwidths = 2,2,2,2\npatch-size = 16\nlambda = 0.5\n",
    )
    .unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--data", &data, "--out", p(&run), "--config", p(&cfg), "--lambda", "0.25"]);
    let echo = fs::read_to_string(run.join(ECHO_FILE)).unwrap();
    assert!(echo.contains("lambda = 0.25"));
    assert!(echo.contains("epochs = 1"));
    assert_eq!(fs::read_to_string(run.join(TRAIN_LOG_FILE)).unwrap().lines().count(), 2);
}
