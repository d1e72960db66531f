//! Command-line front end. `cli_main` is a plain function over argv so the
//! whole surface is testable in-process; the binary is a one-line wrapper.
//!
//! Exit codes: 0 success, 2 configuration problem (bad flags, unparseable
//! or invalid config), 1 runtime failure (I/O, simulation error).

use crate::baselines::run_scenario;
use crate::config::{resolve, Paradigm, ScenarioConfig};
use crate::engine::{RunEndKind, RunOutput};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "chainfl", version, about = "Two-layer federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one scenario and write metrics, trace and DAG artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; prints CSV to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the paradigm: chainfl, fedavg or asynfl.
        #[arg(long)]
        paradigm: Option<String>,
    },
    /// Run a grid of scenarios varying the listed parameters.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Grid axis as dotted-path=v1,v2,... (repeatable).
        #[arg(long = "set")]
        sets: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the scenario and emit the mainchain DAG as line-delimited text.
    ExportDag {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; prints to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

pub fn cli_main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut argv = vec!["chainfl".to_string()];
    argv.extend(args.into_iter().map(Into::into));
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    2
                }
            };
        }
    };
    match cli.cmd {
        Cmd::Run { config, seed, out, paradigm } => cmd_run(&config, seed, out.as_deref(), paradigm),
        Cmd::Sweep { config, sets, out, seed } => cmd_sweep(&config, &sets, &out, seed),
        Cmd::ExportDag { config, seed, out } => cmd_export_dag(&config, seed, out.as_deref()),
        Cmd::ValidateConfig { config } => cmd_validate(&config),
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    ScenarioConfig::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn parse_paradigm(s: &str) -> Result<Paradigm, String> {
    match s {
        "chainfl" => Ok(Paradigm::ChainFl),
        "fedavg" => Ok(Paradigm::FedAvg),
        "asynfl" => Ok(Paradigm::AsynFl),
        other => Err(format!("unknown paradigm '{other}' (expected chainfl, fedavg or asynfl)")),
    }
}

fn end_label(end: RunEndKind) -> &'static str {
    match end {
        RunEndKind::Stopped => "stopped",
        RunEndKind::TimeLimit => "time_limit",
        RunEndKind::Starved => "starved",
    }
}

fn summary_json(cfg: &ScenarioConfig, out: &RunOutput) -> Value {
    json!({
        "name": cfg.name,
        "paradigm": cfg.paradigm.to_string(),
        "seed": cfg.seed,
        "end": end_label(out.end),
        "end_time": out.end_time,
        "epochs": out.epochs,
        "gradients": out.gradients,
        "final_metric_kind": out.final_metric.map(|m| m.kind.to_string()),
        "final_metric_value": out.final_metric.map(|m| m.value),
        "final_loss": out.final_loss,
        "notes": out.notes,
    })
}

fn execute(cfg: &ScenarioConfig) -> Result<RunOutput, (i32, String)> {
    let rs = resolve(cfg).map_err(|e| (2, format!("invalid config: {e}")))?;
    run_scenario(&rs).map_err(|e| (1, format!("run failed: {e}")))
}

fn write_artifacts(dir: &Path, cfg: &ScenarioConfig, out: &RunOutput) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let wr = |name: &str, bytes: &[u8]| -> Result<(), String> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| format!("cannot write {}: {e}", p.display()))
    };
    wr("metrics.csv", crate::metrics::to_csv(&out.rows).as_bytes())?;
    wr("trace.jsonl", out.trace.to_jsonl().as_bytes())?;
    if cfg.paradigm == Paradigm::ChainFl {
        wr("dag.txt", out.dag_export.as_bytes())?;
    }
    let summary = serde_json::to_string_pretty(&summary_json(cfg, out)).expect("summary json");
    wr("summary.json", summary.as_bytes())?;
    Ok(())
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    out_dir: Option<&Path>,
    paradigm: Option<String>,
) -> i32 {
    let mut cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = paradigm {
        match parse_paradigm(&p) {
            Ok(p) => cfg.paradigm = p,
            Err(e) => {
                eprintln!("{e}");
                return 2;
            }
        }
    }
    let out = match execute(&cfg) {
        Ok(o) => o,
        Err((code, msg)) => {
            eprintln!("{msg}");
            return code;
        }
    };
    match out_dir {
        Some(dir) => {
            if let Err(e) = write_artifacts(dir, &cfg, &out) {
                eprintln!("{e}");
                return 1;
            }
            println!(
                "{}: {} seed={} epochs={} gradients={} end={}",
                cfg.name,
                cfg.paradigm,
                cfg.seed,
                out.epochs,
                out.gradients,
                end_label(out.end)
            );
        }
        None => print!("{}", crate::metrics::to_csv(&out.rows)),
    }
    0
}

/// One sweep axis: a dotted config path and its values.
struct Axis {
    path: Vec<String>,
    values: Vec<Value>,
}

fn parse_axis(spec: &str) -> Result<Axis, String> {
    let (path, values) = spec
        .split_once('=')
        .ok_or_else(|| format!("--set '{spec}': expected path=v1,v2,..."))?;
    if path.is_empty() {
        return Err(format!("--set '{spec}': empty parameter path"));
    }
    let values: Vec<Value> = values
        .split(',')
        .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
        .collect();
    if values.is_empty() || values.iter().any(|v| v == &Value::String(String::new())) {
        return Err(format!("--set '{spec}': needs at least one nonempty value"));
    }
    Ok(Axis { path: path.split('.').map(str::to_string).collect(), values })
}

fn set_path(doc: &mut Value, path: &[String], value: Value) -> Result<(), String> {
    let mut cur = doc;
    for key in &path[..path.len() - 1] {
        cur = cur
            .as_object_mut()
            .and_then(|m| m.get_mut(key))
            .ok_or_else(|| format!("unknown config path segment '{key}'"))?;
    }
    let leaf = &path[path.len() - 1];
    cur.as_object_mut()
        .ok_or_else(|| format!("config path '{}' does not address an object", path.join(".")))?
        .insert(leaf.clone(), value);
    Ok(())
}

fn value_label(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    s.chars().map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

fn cmd_sweep(config: &Path, sets: &[String], out_dir: &Path, seed: Option<u64>) -> i32 {
    if sets.is_empty() {
        eprintln!("sweep needs at least one --set axis");
        return 2;
    }
    let base = match load_config(config) {
        Ok(mut c) => {
            if let Some(s) = seed {
                c.seed = s;
            }
            serde_json::to_value(&c).expect("config to json")
        }
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    let axes: Vec<Axis> = match sets.iter().map(|s| parse_axis(s)).collect() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };

    // Cartesian product, rightmost axis fastest.
    let mut combos: Vec<Vec<(usize, Value)>> = vec![Vec::new()];
    for (ai, axis) in axes.iter().enumerate() {
        let mut next = Vec::new();
        for combo in &combos {
            for v in &axis.values {
                let mut c = combo.clone();
                c.push((ai, v.clone()));
                next.push(c);
            }
        }
        combos = next;
    }

    if let Err(e) = fs::create_dir_all(out_dir) {
        eprintln!("cannot create {}: {e}", out_dir.display());
        return 1;
    }
    let mut merged = Vec::new();
    let mut manifest = Vec::new();
    for combo in &combos {
        let mut doc = base.clone();
        let mut label_parts = Vec::new();
        for (ai, v) in combo {
            let axis = &axes[*ai];
            if let Err(e) = set_path(&mut doc, &axis.path, v.clone()) {
                eprintln!("{e}");
                return 2;
            }
            label_parts
                .push(format!("{}-{}", axis.path.last().unwrap(), value_label(v)));
        }
        let label = label_parts.join("_");
        let cfg = match ScenarioConfig::from_json(&doc.to_string()) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("combo {label}: {e}");
                return 2;
            }
        };
        let out = match execute(&cfg) {
            Ok(o) => o,
            Err((code, msg)) => {
                eprintln!("combo {label}: {msg}");
                return code;
            }
        };
        let csv_path = out_dir.join(format!("{label}.csv"));
        if let Err(e) = fs::write(&csv_path, crate::metrics::to_csv(&out.rows)) {
            eprintln!("cannot write {}: {e}", csv_path.display());
            return 1;
        }
        println!(
            "{label}: epochs={} gradients={} metric={}",
            out.epochs,
            out.gradients,
            out.final_metric.map(|m| m.value.to_string()).unwrap_or_else(|| "-".into())
        );
        merged.extend(out.rows.iter().cloned());
        manifest.push(json!({
            "label": label,
            "file": format!("{label}.csv"),
            "summary": summary_json(&cfg, &out),
        }));
    }
    let summary_csv = out_dir.join("summary.csv");
    if let Err(e) = fs::write(&summary_csv, crate::metrics::to_csv(&merged)) {
        eprintln!("cannot write {}: {e}", summary_csv.display());
        return 1;
    }
    let manifest_path = out_dir.join("sweep.json");
    let manifest_text =
        serde_json::to_string_pretty(&Value::Array(manifest)).expect("manifest json");
    if let Err(e) = fs::write(&manifest_path, manifest_text) {
        eprintln!("cannot write {}: {e}", manifest_path.display());
        return 1;
    }
    0
}

fn cmd_export_dag(config: &Path, seed: Option<u64>, out: Option<&Path>) -> i32 {
    let mut cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.paradigm != Paradigm::ChainFl {
        eprintln!("export-dag needs a chainfl scenario; this one runs {}", cfg.paradigm);
        return 2;
    }
    let run = match execute(&cfg) {
        Ok(o) => o,
        Err((code, msg)) => {
            eprintln!("{msg}");
            return code;
        }
    };
    match out {
        Some(path) => {
            if let Err(e) = fs::write(path, run.dag_export.as_bytes()) {
                eprintln!("cannot write {}: {e}", path.display());
                return 1;
            }
        }
        None => print!("{}", run.dag_export),
    }
    0
}

fn cmd_validate(config: &Path) -> i32 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return 2;
        }
    };
    match cfg.check() {
        Ok(()) => {
            println!("ok: {} ({})", cfg.name, cfg.paradigm);
            0
        }
        Err(e) => {
            eprintln!("invalid config: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_exits_2() {
        assert_eq!(cli_main(["run", "--bogus"]), 2);
        assert_eq!(cli_main(["no-such-subcommand"]), 2);
    }

    #[test]
    fn axis_parse_and_label() {
        let a = parse_axis("malicious_ratio=0,0.1,0.3").unwrap();
        assert_eq!(a.path, ["malicious_ratio"]);
        assert_eq!(a.values, vec![json!(0), json!(0.1), json!(0.3)]);
        let b = parse_axis("task.kind=regression").unwrap();
        assert_eq!(b.path, ["task", "kind"]);
        assert_eq!(b.values, vec![json!("regression")]);
        assert!(parse_axis("nope").is_err());
    }

    #[test]
    fn set_path_rejects_unknown_segment() {
        let mut doc = json!({ "task": { "model_dim": 5 } });
        set_path(&mut doc, &["task".into(), "model_dim".into()], json!(7)).unwrap();
        assert_eq!(doc["task"]["model_dim"], 7);
        assert!(set_path(&mut doc, &["nope".into(), "x".into()], json!(1)).is_err());
    }
}
