//! Exercises the command-line surface end to end through `cli_main`:
//! exit codes, artifact layout, replay determinism and sweep output.

use chainfl::cli::cli_main;
use chainfl::config::{Paradigm, ScenarioConfig, TaskDescriptor};
use chainfl::task::TerminationRule;
use std::fs;
use std::path::Path;

fn small_cfg() -> ScenarioConfig {
    ScenarioConfig {
        name: "cli-test".into(),
        seed: 6,
        shards: 2,
        devices_per_round: 4,
        local_epochs: 2,
        batch_size: 5,
        task: TaskDescriptor { model_dim: 3, samples_per_device: 12, ..Default::default() },
        termination: TerminationRule::MaxGlobalEpochs { epochs: 3 },
        ..Default::default()
    }
}

fn write_cfg(dir: &Path, cfg: &ScenarioConfig) -> String {
    let path = dir.join("scenario.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.to_str().unwrap().to_string()
}

fn run(args: &[&str]) -> i32 {
    cli_main(args.iter().map(|s| s.to_string()))
}

#[test]
fn validate_config_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_cfg(dir.path(), &small_cfg());
    assert_eq!(run(&["validate-config", "--config", &good]), 0);

    // More approved tips than candidates can never be satisfied.
    let mut bad = small_cfg();
    bad.candidate_tips = 2;
    bad.approved_tips = 3;
    let bad_path = dir.path().join("bad.json");
    fs::write(&bad_path, bad.to_json()).unwrap();
    assert_eq!(run(&["validate-config", "--config", bad_path.to_str().unwrap()]), 2);

    assert_eq!(run(&["validate-config", "--config", "/nonexistent/x.json"]), 2);

    let garbled = dir.path().join("garbled.json");
    fs::write(&garbled, "{not json").unwrap();
    assert_eq!(run(&["validate-config", "--config", garbled.to_str().unwrap()]), 2);
}

#[test]
fn bad_usage_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &small_cfg());
    assert_eq!(run(&["run", "--config", &cfg, "--frobnicate"]), 2);
    assert_eq!(run(&["no-such-command"]), 2);
    assert_eq!(run(&["run"]), 2);
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn run_writes_artifacts_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &small_cfg());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    for out in [&out_a, &out_b] {
        let code = run(&["run", "--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        for f in ["metrics.csv", "trace.jsonl", "dag.txt", "summary.json"] {
            assert!(out.join(f).exists(), "missing artifact {f}");
        }
    }
    for f in ["metrics.csv", "trace.jsonl", "dag.txt", "summary.json"] {
        assert_eq!(
            fs::read(out_a.join(f)).unwrap(),
            fs::read(out_b.join(f)).unwrap(),
            "artifact {f} differs between identical runs"
        );
    }

    let csv = fs::read_to_string(out_a.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("paradigm,seed,global_epoch,gradients,sim_time,metric_kind,metric_value,loss"));
    assert!(csv.lines().skip(1).all(|l| l.starts_with("chainfl,7,")));

    // A different seed must actually change the run.
    let out_c = dir.path().join("c");
    assert_eq!(run(&["run", "--config", &cfg, "--seed", "8", "--out", out_c.to_str().unwrap()]), 0);
    assert_ne!(
        fs::read(out_a.join("metrics.csv")).unwrap(),
        fs::read(out_c.join("metrics.csv")).unwrap()
    );
}

#[test]
fn paradigm_override_drops_dag_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &small_cfg());
    let out = dir.path().join("fed");
    let code = run(&["run", "--config", &cfg, "--paradigm", "fedavg", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.join("metrics.csv").exists());
    assert!(!out.join("dag.txt").exists(), "baselines have no mainchain");
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("fedavg,"));

    assert_eq!(run(&["run", "--config", &cfg, "--paradigm", "bogus"]), 2);
}

#[test]
fn sweep_produces_grid_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &small_cfg());
    let out = dir.path().join("sweep");
    let code = run(&[
        "sweep",
        "--config",
        &cfg,
        "--set",
        "malicious_ratio=0,0.1,0.2,0.3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let mut combo_files: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv") && n != "summary.csv")
        .collect();
    combo_files.sort();
    assert_eq!(combo_files.len(), 4, "one csv per grid point: {combo_files:?}");

    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().count() > 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    let combos = manifest.as_array().unwrap();
    assert_eq!(combos.len(), 4);
    assert!(combos.iter().all(|c| c["label"].is_string() && c["summary"]["end"] == "stopped"));

    // Unknown config path in an axis is a usage error.
    assert_eq!(
        run(&["sweep", "--config", &cfg, "--set", "no_such_knob=1,2", "--out", out.to_str().unwrap()]),
        2
    );
}

#[test]
fn export_dag_emits_vertex_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), &small_cfg());
    let path = dir.path().join("dag.txt");
    assert_eq!(
        run(&["export-dag", "--config", &cfg, "--out", path.to_str().unwrap()]),
        0
    );
    let dag = fs::read_to_string(&path).unwrap();
    let first = dag.lines().next().unwrap();
    let cols: Vec<&str> = first.split('\t').collect();
    assert_eq!(cols.len(), 5, "tx_id, sender, approves, timestamp, status");
    assert_eq!(cols[1], "genesis");
    // 2 shards x 3 epochs + genesis.
    assert_eq!(dag.lines().count(), 7);

    // Baselines have no DAG to export.
    let mut fed = small_cfg();
    fed.paradigm = Paradigm::FedAvg;
    let fed_path = dir.path().join("fed.json");
    fs::write(&fed_path, fed.to_json()).unwrap();
    assert_eq!(run(&["export-dag", "--config", fed_path.to_str().unwrap()]), 2);
}
