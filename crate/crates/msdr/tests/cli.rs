use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn msdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msdr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> (i32, Value) {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let out = msdr(&full);
    let doc = serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{args:?}: stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    });
    (out.status.code().unwrap(), doc)
}

fn code(args: &[&str]) -> i32 {
    msdr(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_hdc_text_and_exit_codes() {
    let ok = msdr(&["validate-hdc", "--rates", "1,2,5"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(
        String::from_utf8_lossy(&ok.stdout).trim(),
        "M = [1,2,5] VALID (M2 = 2 <= K = 3)"
    );

    let bad = msdr(&["validate-hdc", "--rates", "1,2,9", "--kernel", "3"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(
        String::from_utf8_lossy(&bad.stdout).trim(),
        "M = [3,5,9] INVALID (M2 = 5 > K = 3)"
    );
}

#[test]
fn validate_hdc_json() {
    let (c, doc) = json(&["validate-hdc", "--rates", "1,2,9"]);
    assert_eq!(c, 2);
    assert_eq!(doc["valid"], false);
    assert_eq!(doc["gaps"], serde_json::json!([3, 5, 9]));
    assert_eq!(doc["checked_gap"], 5);

    let (c, doc) = json(&["validate-hdc", "--rates", "1,2,3"]);
    assert_eq!(c, 0);
    assert_eq!(doc["valid"], true);
}

#[test]
fn usage_errors() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["validate-hdc"]), 1);
    assert_eq!(code(&["validate-hdc", "--rates", "1,x"]), 1);
    assert_eq!(code(&["validate-hdc", "--rates", "0,1"]), 1);
    assert_eq!(code(&["rf", "--layers", "3-1"]), 1);
    assert_eq!(code(&["info"]), 1);
    assert_eq!(code(&["info", "--preset", "huge"]), 1);
    assert_eq!(code(&["--version"]), 0);
}

#[test]
fn receptive_field() {
    let (c, doc) = json(&["rf", "--layers", "3:1,3:2,3:5"]);
    assert_eq!(c, 0);
    assert_eq!(doc["receptive_field"], 17);
    let out = msdr(&["rf", "--layers", "3:1"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "receptive field 3x3");
}

#[test]
fn info_presets() {
    let (c, gray) = json(&["info", "--preset", "gray"]);
    assert_eq!(c, 0);
    let total = gray["params"]["total"].as_f64().unwrap();
    assert!((total - 3.3e5).abs() <= 0.05 * 3.3e5, "{total}");
    assert_eq!(gray["params"]["conv_weights"], 334_528);
    assert_eq!(gray["receptive_field"], 57);
    assert_eq!(gray["config"]["depth"], 11);

    let (_, color) = json(&["info", "--preset", "color"]);
    let total = color["params"]["total"].as_f64().unwrap();
    assert!((total - 3.4e5).abs() <= 0.05 * 3.4e5, "{total}");
    assert_eq!(color["params"]["conv_weights"], 340_032);
}

#[test]
fn gen_train_eval_denoise_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let (c, doc) = json(&[
        "gen-corpus",
        "--out",
        s(&data),
        "--count",
        "4",
        "--size",
        "32",
        "--seed",
        "5",
    ]);
    assert_eq!(c, 0);
    assert_eq!(doc["images"].as_array().unwrap().len(), 4);

    let config = tmp.path().join("cfg.json");
    std::fs::write(
        &config,
        r#"{"model": {"preset": "miniature"}, "epochs": 2, "batch_size": 4,
            "patch_size": 16, "patch_stride": 16, "validation_fraction": 0.25}"#,
    )
    .unwrap();
    let (c, summary) = json(&[
        "train",
        "--config",
        s(&config),
        "--data-dir",
        s(&data),
        "--out-dir",
        s(&run),
    ]);
    assert_eq!(c, 0);
    assert_eq!(summary["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(summary["validation_images"], serde_json::json!(["synth_03.pgm"]));
    assert_eq!(summary["total_steps"], 6);
    for name in [
        "epoch-0001.ckpt",
        "epoch-0002.ckpt",
        "final.ckpt",
        "summary.json",
        "train.log",
    ] {
        assert!(run.join(name).exists(), "{name}");
    }
    let log = std::fs::read_to_string(run.join("train.log")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("epoch=2 loss=")), "{log}");

    let model = run.join("final.ckpt");
    let report_path = tmp.path().join("report.json");
    let one = tmp.path().join("one");
    std::fs::create_dir(&one).unwrap();
    std::fs::copy(data.join("synth_01.pgm"), one.join("synth_01.pgm")).unwrap();
    let (c, report) = json(&[
        "eval",
        "--model",
        s(&model),
        "--dir",
        s(&one),
        "--sigma",
        "25",
        "--seed",
        "4",
        "--report",
        s(&report_path),
    ]);
    assert_eq!(c, 0);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(saved, report);

    let out = tmp.path().join("den.pgm");
    let (c, den) = json(&[
        "denoise",
        "--model",
        s(&model),
        "--in",
        s(&one.join("synth_01.pgm")),
        "--out",
        s(&out),
        "--sigma",
        "25",
        "--seed",
        "4",
    ]);
    assert_eq!(c, 0);
    let a = den["psnr_db"].as_f64().unwrap();
    let b = report["mean_psnr_db"].as_f64().unwrap();
    assert!((a - b).abs() < 1e-9, "denoise {a} vs eval {b}");
    assert!(out.exists());

    // A color image does not fit a gray model.
    let color = tmp.path().join("color");
    assert_eq!(
        code(&[
            "gen-corpus",
            "--out",
            s(&color),
            "--count",
            "1",
            "--size",
            "16",
            "--channels",
            "3"
        ]),
        0
    );
    let ppm = color.join("synth_00.ppm");
    assert_eq!(
        code(&["denoise", "--model", s(&model), "--in", s(&ppm), "--out", s(&out)]),
        2
    );
}

#[test]
fn io_failures_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.ckpt");
    assert_eq!(code(&["info", "--model", s(&missing)]), 3);

    let garbage = tmp.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = msdr(&["info", "--model", s(&garbage)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DRCN"));

    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"epochs": 1, "learning_rate": 0.1}"#).unwrap();
    let out = msdr(&["train", "--config", s(&cfg)]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn invalid_dilations_in_config_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"preset": "miniature", "block_dilations": [1, 2, 9]}, "epochs": 1}"#,
    )
    .unwrap();
    let out = msdr(&["train", "--config", s(&cfg), "--out-dir", s(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("M_2 = 5"));
}
