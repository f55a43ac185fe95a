use std::path::Path;

use lambda_nas_cli::{mean_ci95, median, run_cli, EXIT_OK, EXIT_USAGE};

const TINY: &str = r#"{
  "train": {"epochs": 3, "batch_size": 16, "alpha_lr": 0.003},
  "net": {
    "cell": {"node_count": 3, "edges": [[0, 1], [0, 2], [1, 2]], "ops": ["skip", "nonlinear"], "feature_width": 2},
    "layers": 2, "input_dim": 2, "num_classes": 2
  },
  "dataset": {
    "kind": {"kind": "layered_composition", "depth": 2, "gain": 2.0},
    "seed": 1,
    "sizes": {"train": 48, "val": 48, "input_dim": 2, "classes": 2}
  },
  "bench": {"epochs": 2, "batch_size": 16, "lr": 0.05, "momentum": 0.9, "weight_decay": 0.0005, "grad_clip": 5.0, "seed": 0}
}"#;

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    std::fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_string()
}

fn cli(args: &[&str]) -> i32 {
    run_cli(std::iter::once("lambda-nas").chain(args.iter().copied()))
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cli(&["search", "--config", "missing.json"]), EXIT_USAGE);
    assert_eq!(cli(&["search", "--no-such-flag"]), EXIT_USAGE);
    assert_eq!(cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(cli(&["search", "--variant", "both"]), EXIT_USAGE);
    assert_eq!(cli(&["collapse-demo", "--seeds", "0"]), EXIT_USAGE);
    assert_eq!(cli(&["--help"]), EXIT_OK);
}

#[test]
fn missing_config_message_names_the_path() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_lambda-nas"))
        .args(["search", "--config", "missing.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn verify_passes() {
    assert_eq!(cli(&["verify"]), EXIT_OK);
}

#[test]
fn search_exports_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let run = dir.path().join("run");
    let code = cli(&["search", "--config", &config, "--seed", "2", "--variant", "sign", "--out", run.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    for f in ["trace.jsonl", "summary.json", "result.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["variant"], "sign");
    assert_eq!(summary["seed"], 2);
    assert_eq!(summary["epochs"], 3);

    let csv_run = dir.path().join("csv");
    let code = cli(&["search", "--config", &config, "--format", "csv", "--epochs", "1", "--out", csv_run.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(csv_run.join("trace.csv").exists());

    let report = dir.path().join("report");
    assert_eq!(cli(&["report", run.to_str().unwrap(), csv_run.to_str().unwrap(), "--out", report.to_str().unwrap()]), EXIT_OK);
    for f in ["alignment.csv", "op_grads.csv", "l1_change.csv"] {
        assert!(report.join(f).exists(), "{f}");
    }
    assert_eq!(cli(&["report", dir.path().join("nothing").to_str().unwrap()]), EXIT_USAGE);
}

#[test]
fn bench_build_and_collapse_demo() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let bench = dir.path().join("bench.json");
    assert_eq!(cli(&["bench-build", "--config", &config, "--out", bench.to_str().unwrap()]), EXIT_OK);
    let text = std::fs::read_to_string(&bench).unwrap();
    assert_eq!(serde_json::from_str::<serde_json::Value>(&text).unwrap()["entries"].as_object().unwrap().len(), 8);

    let out = dir.path().join("demo");
    let code = cli(&[
        "collapse-demo", "--config", &config, "--seeds", "2", "--bench", bench.to_str().unwrap(), "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("collapse_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["vanilla"].as_array().unwrap().len(), 2);
    assert!(summary["regularized_stats"]["ci95_half_width"].is_number());
    assert!(out.join("cosine_s1").join("trace.jsonl").exists());

    // a bench built for another config is refused
    let code = cli(&["collapse-demo", "--seeds", "1", "--epochs", "3", "--bench", bench.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn search_with_bench_reports_rank() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let bench = dir.path().join("bench.json");
    assert_eq!(cli(&["bench-build", "--config", &config, "--out", bench.to_str().unwrap()]), EXIT_OK);
    let run = dir.path().join("run");
    let code = cli(&["search", "--config", &config, "--lambda", "0", "--bench", bench.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    let pct = summary["rank"]["percentile"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&pct));
}

#[test]
fn statistics_helpers() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    let (mean, ci) = mean_ci95(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(mean, 2.5);
    // t(0.975, 3) = 3.182446..., s = √(5/3)
    let expected = 3.182_446_305_284_263 * (5.0_f64 / 3.0).sqrt() / 2.0;
    assert!((ci.unwrap() - expected).abs() <= 1e-9);
    assert_eq!(mean_ci95(&[0.7]), (0.7, None));
}
