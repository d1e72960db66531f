//! A complete simulation end to end: three shards train in parallel, each
//! publishes its iteration models to the mainchain DAG, and the observer
//! samples the global model as the run converges.

use chainfl::config::{resolve, ScenarioConfig, TaskDescriptor};
use chainfl::engine::{run_chainfl, RunEndKind};
use chainfl::metrics::to_csv;
use chainfl::task::TerminationRule;

fn main() {
    let cfg = ScenarioConfig {
        name: "full-demo".into(),
        seed: 77,
        shards: 3,
        nodes_per_shard: 3,
        devices_per_round: 5,
        candidate_tips: 3,
        approved_tips: 2,
        local_epochs: 4,
        batch_size: 10,
        learning_rate: 0.08,
        task: TaskDescriptor { model_dim: 5, samples_per_device: 30, noise_sd: 0.02, ..Default::default() },
        termination: TerminationRule::MaxGlobalEpochs { epochs: 4 },
        ..Default::default()
    };
    let rs = resolve(&cfg).unwrap();
    println!(
        "{} devices across {} shards, {} candidate tips, {} approved per iteration\n",
        rs.profiles.len(),
        cfg.shards,
        cfg.candidate_tips,
        cfg.approved_tips
    );

    let out = run_chainfl(&rs).unwrap();
    assert_eq!(out.end, RunEndKind::Stopped);

    println!("metrics rows:");
    print!("{}", to_csv(&out.rows));

    println!("\nmainchain DAG ({} vertices):", out.ledger.len());
    for line in out.dag_export.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        let approves = cols[2].split(',').map(|a| &a[..a.len().min(8)]).collect::<Vec<_>>();
        println!(
            "  {:8}  {:8} t={:4} {:8} approves {}",
            &cols[0][..8],
            cols[1],
            cols[3],
            cols[4],
            approves.join(",")
        );
    }

    println!(
        "\nstopped at t={} after {} global epochs, {} gradient computations",
        out.end_time, out.epochs, out.gradients
    );
    println!("final loss {:.5}", out.final_loss.unwrap());
}
