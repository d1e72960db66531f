//! Accuracy as the malicious fraction grows: validated sharded training
//! degrades slowly because rejected models never reach an aggregate, while
//! FedAvg averages whatever arrives.

use chainfl::baselines::run_scenario;
use chainfl::config::{resolve, Paradigm, ScenarioConfig, TaskDescriptor, TaskKindName};
use chainfl::device::AttackKind;
use chainfl::task::{PartitionScheme, TerminationRule};

fn main() {
    let base = ScenarioConfig {
        name: "sweep".into(),
        seed: 4,
        shards: 2,
        devices_per_round: 8,
        local_epochs: 4,
        batch_size: 10,
        learning_rate: 0.1,
        attack: AttackKind::GaussianNoise { sd: 3.0 },
        task: TaskDescriptor {
            kind: TaskKindName::Classification,
            model_dim: 8,
            classes: 4,
            samples_per_device: 30,
            partition: PartitionScheme::IidRandom,
            ..Default::default()
        },
        gradient_budget: Some(600),
        termination: TerminationRule::MaxGlobalEpochs { epochs: 10_000 },
        ..Default::default()
    };

    println!("{:>10} {:>10} {:>10}", "malicious", "chainfl", "fedavg");
    for pct in [0, 10, 20, 30, 40] {
        let ratio = pct as f64 / 100.0;
        let mut row = vec![format!("{pct}%")];
        for paradigm in [Paradigm::ChainFl, Paradigm::FedAvg] {
            let mut cfg = base.clone();
            cfg.paradigm = paradigm;
            cfg.malicious_ratio = ratio;
            let out = run_scenario(&resolve(&cfg).unwrap()).unwrap();
            row.push(format!("{:.3}", out.final_metric.unwrap().value));
        }
        println!("{:>10} {:>10} {:>10}", row[0], row[1], row[2]);
    }
}
