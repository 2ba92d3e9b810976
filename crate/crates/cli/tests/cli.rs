use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmmlp_cli::config::RunConfig;
use cmmlp_cli::report::table_rows;
use cmmlp_cli::{exit_code, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};
use cmmlp_core::Error as CoreError;

const TINY: &str = "\
model.image_size = 64
model.widths = 2,2,4,4,4
model.decoder_channels = 2
train.epochs = 2
train.batch_size = 4
train.eval_every = 1
";

fn cmmlp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmmlp"))
        .args(args)
        .env("CMMLP_DETERMINISTIC", "1")
        .env("CMMLP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny config plus a 10-image synthetic set at 64x64.
fn workspace() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.txt");
    fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    let o = cmmlp(&["gen", "--out", s(&data), "--count", "10", "--size", "64", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{o:?}");
    (dir, cfg, data)
}

#[test]
fn primitive_gradcheck_passes() {
    let o = cmmlp(&["gradcheck", "--scope", "primitive"]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains(" 0 failed"), "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn impossible_tolerance_exits_numeric() {
    let o = cmmlp(&["gradcheck", "--scope", "primitive", "--tolerance", "1e-300"]);
    assert_eq!(o.status.code(), Some(EXIT_NUMERIC), "{o:?}");
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cmmlp(&["frobnicate"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(cmmlp(&["gradcheck", "--scope", "everything"]).status.code(), Some(EXIT_USAGE));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "model.depth = 3\n").unwrap();
    let o = cmmlp(&["train", "--config", s(&bad), "--data", s(dir.path()), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.depth"));
    assert_eq!(cmmlp(&["--version"]).status.code(), Some(EXIT_OK));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmmlp(&["eval", "--oracle", "--data", s(&dir.path().join("missing")), "--out", s(&dir.path().join("r.txt"))]);
    assert_eq!(o.status.code(), Some(EXIT_DATA), "{o:?}");
}

#[test]
fn exit_codes_follow_the_error_kind() {
    assert_eq!(exit_code(&CoreError::NonFinite("x".into()).into()), EXIT_NUMERIC);
    assert_eq!(exit_code(&CoreError::Config("x".into()).into()), EXIT_USAGE);
    assert_eq!(exit_code(&CoreError::Data("x".into()).into()), EXIT_DATA);
    let wrapped = anyhow::Error::from(CoreError::NonFinite("x".into())).context("training");
    assert_eq!(exit_code(&wrapped), EXIT_NUMERIC);
}

#[test]
fn oracle_eval_reports_perfect_scores() {
    let (dir, _, data) = workspace();
    let report = dir.path().join("oracle.txt");
    let o = cmmlp(&["eval", "--oracle", "--data", s(&data), "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{o:?}");
    let table = fs::read_to_string(&report).unwrap();
    assert_eq!(table_rows(&table), 1);
    let row: Vec<&str> = table.lines().nth(2).unwrap().split('|').map(str::trim).filter(|c| !c.is_empty()).collect();
    assert_eq!(&row[1..], &["1.0000", "1.0000", "0.0000", "1.0000"]);
    let lines = fs::read_to_string(dir.path().join("oracle.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 11);
}

#[test]
fn ablation_table_has_one_row_per_setting() {
    let (dir, cfg, data) = workspace();
    let table = dir.path().join("ablate.txt");
    let o = cmmlp(&[
        "ablate", "--config", s(&cfg), "--data", s(&data), "--settings", "full,w/o-ACRE", "--out", s(&table),
        "--set", "train.epochs=1",
    ]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{o:?}");
    let text = fs::read_to_string(&table).unwrap();
    assert_eq!(table_rows(&text), 2);
    let header: Vec<&str> = text.lines().next().unwrap().split('|').map(str::trim).filter(|c| !c.is_empty()).collect();
    assert_eq!(header, ["Setting", "Dice", "mIoU", "MAE", "MPA"]);
    let labels: Vec<&str> = text.lines().skip(2).map(|l| l.split('|').nth(1).unwrap().trim()).collect();
    assert_eq!(labels, ["full", "w/o-ACRE"]);

    let bad = cmmlp(&["ablate", "--config", s(&cfg), "--data", s(&data), "--settings", "full,w/o-Nothing", "--out", s(&table)]);
    assert_eq!(bad.status.code(), Some(EXIT_USAGE));
}

#[test]
fn train_eval_predict_round_trip() {
    let (dir, cfg, data) = workspace();
    let run = dir.path().join("run");
    let o = cmmlp(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{o:?}");
    for f in ["config.txt", "history.jsonl", "best.ckpt", "last.ckpt", "metrics.txt", "metrics.jsonl"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(run.join("history.jsonl")).unwrap().lines().count(), 2);

    // The written config alone reproduces the run.
    let resolved = RunConfig::load(&run.join("config.txt")).unwrap();
    assert_eq!(resolved.model.image_size, 64);
    assert!(resolved.deterministic);
    let again = dir.path().join("again");
    let o = cmmlp(&["train", "--config", s(&run.join("config.txt")), "--out", s(&again)]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{o:?}");
    assert_eq!(fs::read(run.join("best.ckpt")).unwrap(), fs::read(again.join("best.ckpt")).unwrap());

    let ckpt = run.join("best.ckpt");
    let (r1, r2) = (dir.path().join("e1.txt"), dir.path().join("e2.txt"));
    for r in [&r1, &r2] {
        let o = cmmlp(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(r)]);
        assert_eq!(o.status.code(), Some(EXIT_OK), "{o:?}");
    }
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    assert_eq!(fs::read(dir.path().join("e1.jsonl")).unwrap(), fs::read(dir.path().join("e2.jsonl")).unwrap());

    let image = data.join("images/synth_0000.png");
    let pred = dir.path().join("pred/p.png");
    let o = cmmlp(&["predict", "--checkpoint", s(&ckpt), "--image", s(&image), "--out", s(&pred)]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{o:?}");
    let prob = image::open(&pred).unwrap();
    assert_eq!((prob.width(), prob.height()), (64, 64));
    assert!(matches!(prob, image::DynamicImage::ImageLuma8(_)));
    let overlay = image::open(dir.path().join("pred/p_overlay.png")).unwrap();
    assert_eq!((overlay.width(), overlay.height()), (64, 64));

    let no_cfg = cmmlp(&["predict", "--checkpoint", s(&image), "--image", s(&image), "--out", s(&pred)]);
    assert_eq!(no_cfg.status.code(), Some(EXIT_USAGE));
}
