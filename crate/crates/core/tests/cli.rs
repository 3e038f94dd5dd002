//! Process-level harness tests: exit codes, artifact layout, replay
//! byte-identity, and sweep/cost/grid output framing.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use zowarmup::config::RunConfig;
use zowarmup::fed::{run_zowarmup, sweep_seed};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_zowarmup")
}

fn workspace_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run_cli(args: &[&str], out_dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .env("ZOWARMUP_OUT_DIR", out_dir)
        .output()
        .expect("spawn zowarmup")
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&["run", "/nonexistent/config.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_config_exits_2_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.toml");
    let text = std::fs::read_to_string(workspace_config("smoke.toml")).unwrap();
    std::fs::write(&cfg, text.replace("tau = 0.75", "tau = \"high\"")).unwrap();
    let out = run_cli(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("tau"), "stderr: {stderr}");
}

#[test]
fn numeric_divergence_exits_3_with_round_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("diverge.toml");
    let text = std::fs::read_to_string(workspace_config("smoke.toml")).unwrap();
    std::fs::write(&cfg, text.replace("eta_c_hi = 0.05", "eta_c_hi = 1e12")).unwrap();
    let out = run_cli(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("round"), "stderr: {stderr}");
}

#[test]
fn smoke_run_is_fast_and_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let out = run_cli(&["run", workspace_config("smoke.toml").to_str().unwrap()], dir.path());
    let elapsed = started.elapsed();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");

    let run_dir = dir.path().join("smoke");
    let metrics = std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 10);
    assert!(run_dir.join("cost_report.json").exists());
    assert!(run_dir.join("final_weights.bin").exists());

    // The cost report carries both phases with the protocol byte counts.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("cost_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["zo"]["uplink_bytes_per_client"], 12); // 4 bytes x S=3
    assert_eq!(report["accounting"], "bits32");
}

#[test]
fn rerunning_the_same_config_is_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg = workspace_config("smoke.toml");
    assert_eq!(run_cli(&["run", cfg.to_str().unwrap()], dir_a.path()).status.code(), Some(0));
    assert_eq!(run_cli(&["run", cfg.to_str().unwrap()], dir_b.path()).status.code(), Some(0));
    let a = std::fs::read(dir_a.path().join("smoke/metrics.jsonl")).unwrap();
    let b = std::fs::read(dir_b.path().join("smoke/metrics.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);

    let wa = std::fs::read(dir_a.path().join("smoke/final_weights.bin")).unwrap();
    let wb = std::fs::read(dir_b.path().join("smoke/final_weights.bin")).unwrap();
    assert_eq!(wa, wb);
}

#[test]
fn single_value_sweep_equals_one_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = workspace_config("smoke.toml");
    let out = run_cli(
        &[
            "sweep",
            cfg_path.to_str().unwrap(),
            "--axis",
            "pivot",
            "--values",
            "5",
            "--seeds",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let summary =
        std::fs::read_to_string(dir.path().join("smoke_sweep_pivot/summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("value,mean_accuracy,std_accuracy,runs"));
    let row = lines.next().unwrap();
    let mean: f64 = row.split(',').nth(1).unwrap().parse().unwrap();

    // The sweep's seed index 0 derives from the config's master seed.
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let data = cfg.dataset().unwrap();
    let mut exp = cfg.experiment();
    exp.pivot_round = 5;
    exp.master_seed = sweep_seed(cfg.master_seed, 0);
    let expected = run_zowarmup(&exp, &data).unwrap().final_accuracy();
    assert!((mean - expected).abs() < 1e-12, "{mean} vs {expected}");
}

#[test]
fn sweep_emits_one_summary_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(
        &[
            "sweep",
            workspace_config("smoke.toml").to_str().unwrap(),
            "--axis",
            "s",
            "--values",
            "1,2,3",
            "--seeds",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("smoke_sweep_s/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4); // header + 3 values
    let curves = std::fs::read_to_string(dir.path().join("smoke_sweep_s/curves.csv")).unwrap();
    // header + 3 values x 2 seeds x 10 rounds
    assert_eq!(curves.lines().count(), 1 + 3 * 2 * 10);
}

#[test]
fn cost_subcommand_reports_built_in_descriptors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&["cost", "--builtin", "resnet18-cifar32"], dir.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["param_count"], 11_173_962u64);
    assert_eq!(report["zero_order"]["uplink_bytes"], 12);

    // Strict 64-bit accounting doubles every byte figure.
    let out64 = run_cli(
        &["cost", "--builtin", "resnet18-cifar32", "--accounting", "64"],
        dir.path(),
    );
    let report64: serde_json::Value = serde_json::from_slice(&out64.stdout).unwrap();
    assert_eq!(report64["zero_order"]["uplink_bytes"], 24);
}

#[test]
fn cost_subcommand_reads_descriptor_files() {
    let dir = tempfile::tempdir().unwrap();
    let desc = serde_json::json!({
        "param_count": 6,
        "layer_outputs": [{"maps": 2, "width": 1, "height": 1}],
    });
    let path = dir.path().join("mlp.json");
    std::fs::write(&path, desc.to_string()).unwrap();
    let out = run_cli(
        &["cost", path.to_str().unwrap(), "--batch-size", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // 4 * (2P + BS * 2) = 4 * 14
    assert_eq!(report["first_order"]["peak_memory_bytes"], 56);
    assert_eq!(report["zero_order"]["peak_memory_bytes"], 56);
}

#[test]
fn grid_search_writes_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&["grid", workspace_config("smoke.toml").to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(dir.path().join("smoke_grid/grid.csv")).unwrap();
    // header + 8x3 warm-up cells + 11x4 zo cells
    assert_eq!(grid.lines().count(), 1 + 24 + 44);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("warm-up grid best"), "stdout: {stdout}");
    assert!(stdout.contains("zo grid best"), "stdout: {stdout}");
}
