use std::path::Path;
use std::process::{Command, Output};

fn avfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avfuse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_config(root: &Path) -> String {
    let cfg = serde_json::json!({
        "data": {"n_train": 12, "n_val": 5, "n_eval": 5, "frames": 8, "d_audio": 16, "d_secondary": 16},
        "model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32, "max_caption_len": 14},
        "train": {"epochs": 2, "batch_size": 4, "warmup_epochs": 1},
        "decode": {"beam_width": 2, "max_depth": 14},
        "cbow": {"embedding_dim": 16, "epochs": 1},
        "grid": [0.5, 1.0],
        "n_seeds": 2,
        "manifest": root.join("data/manifest.jsonl"),
        "out_dir": root.join("runs"),
    });
    let path = root.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    ok(&avfuse(&["gen-data", "--config", &cfg]));
    assert!(tmp.path().join("data/manifest.jsonl").exists());
    ok(&avfuse(&["train", "--config", &cfg]));
    let sweep = ok(&avfuse(&["sweep", "--config", &cfg]));
    assert_eq!(sweep.lines().count(), 2);
    ok(&avfuse(&["eval", "--config", &cfg]));
    ok(&avfuse(&["eval", "--config", &cfg, "--seed", "1", "--lambda", "0.5"]));
    ok(&avfuse(&["vision-only", "--config", &cfg, "--seed", "0"]));
    let curve = ok(&avfuse(&["curve", "--config", &cfg]));
    assert_eq!(curve.lines().count(), 3);
    let runs = tmp.path().join("runs");
    for f in ["model.ckpt", "vocab.txt", "config.json", "run_log.jsonl", "sweep.json", "sweep.csv", "eval_report.json", "eval_report.csv", "eval_report_candidates.jsonl"] {
        assert!(runs.join("seed_0").join(f).exists(), "{f}");
    }
    assert!(runs.join("seed_0/vision_only_report.json").exists());
    assert!(runs.join("curve.csv").exists());

    let out = tmp.path().join("tables");
    let md = ok(&avfuse(&["table", runs.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert!(md.contains("| runs | 2 |"), "{md}");
    assert_eq!(std::fs::read_to_string(out.join("table.csv")).unwrap().lines().count(), 2);
    // only seed 0 has a vision-only report
    let vo = avfuse(&["table", runs.to_str().unwrap(), "--report", "vision-only", "--out", out.to_str().unwrap()]);
    assert!(!vo.status.success());
}

fn one_line_error(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error: ")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    lines[0].to_string()
}

#[test]
fn failures_print_one_machine_parsable_line() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let line = one_line_error(&avfuse(&["train", "--config", missing.to_str().unwrap()]));
    assert!(line.starts_with("error: kind=io msg=\""), "{line}");

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"grid": []}"#).unwrap();
    let line = one_line_error(&avfuse(&["sweep", "--config", bad.to_str().unwrap()]));
    assert!(line.starts_with("error: kind=config "), "{line}");

    let cfg = tiny_config(tmp.path());
    let line = one_line_error(&avfuse(&["eval", "--config", &cfg, "--seed", "0"]));
    assert!(line.starts_with("error: kind=io "), "{line}");

    let out = avfuse(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(one_line_error(&out).starts_with("error: kind=usage "));
}
