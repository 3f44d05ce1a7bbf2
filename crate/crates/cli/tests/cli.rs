use std::fs;

use hynd_cli::run_command;

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("hynd").chain(args.iter().copied()))
}

#[test]
fn verify_theory_passes_and_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["verify-theory", "--n", "2", "--r", "8", "--out", out]), 0);
    let csv = fs::read_to_string(dir.path().join("verify_theory.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
}

#[test]
fn bench_mem_writes_one_row_per_token_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        run(&["bench-mem", "--tokens", "64,256", "--mixer", "attention", "--out", out]),
        0
    );
    let csv = fs::read_to_string(dir.path().join("bench_mem.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("tokens,mixer,peak_bytes,live_bytes,param_count"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("64,attention,"));
    assert!(dir.path().join("bench_mem.svg").exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn config_document_fills_unset_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"seed": 9, "n": 2, "r": 3}"#).unwrap();
    let out = dir.path().join("out");
    let code = run(&[
        "verify-theory",
        "--config",
        cfg.to_str().unwrap(),
        "--r",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["n"], 2);
    assert_eq!(manifest["config"]["r"], 4);
}

#[test]
fn config_document_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"rr": 3}"#).unwrap();
    let out = dir.path().join("out");
    let code = run(&[
        "verify-theory",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn missing_config_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(run(&["verify-theory", "--config", missing.to_str().unwrap()]), 2);
}

#[test]
fn invalid_flag_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["bench-mem", "--mixer", "convnet", "--out", out]), 2);
    assert_eq!(
        run(&["bench-mem", "--tokens", "60", "--mixer", "attention", "--out", out]),
        1
    );
    assert_eq!(run(&["verify-theory", "--n", "1", "--out", out]), 2);
    assert_eq!(
        run(&[
            "train",
            "--data",
            dir.path().join("nope.bin").to_str().unwrap(),
            "--out",
            out
        ]),
        2
    );
}

#[test]
fn fit_kernel_emits_tables_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = run(&[
        "fit-kernel",
        "--steps",
        "300",
        "--side",
        "4",
        "--tol",
        "1e6",
        "--out",
        out,
    ]);
    assert_eq!(code, 0);
    let summary = fs::read_to_string(dir.path().join("fit_kernel.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let trace = fs::read_to_string(dir.path().join("fit_kernel_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 2 * 300);
    let svg = fs::read_to_string(dir.path().join("fit_kernel.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn short_training_run_saves_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = run(&[
        "train",
        "--samples",
        "8",
        "--classes",
        "2",
        "--depth",
        "2",
        "--channels",
        "8",
        "--heads",
        "2",
        "--steps",
        "3",
        "--batch-size",
        "4",
        "--out",
        out,
    ]);
    assert_eq!(code, 0);
    assert!(dir.path().join("model.ckpt").exists());
    let trace = fs::read_to_string(dir.path().join("train_loss.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);
    let summary = fs::read_to_string(dir.path().join("train_summary.csv")).unwrap();
    assert!(summary.starts_with("samples,steps,final_loss"));
}
