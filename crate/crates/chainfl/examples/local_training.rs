//! One device's view of a training round: take the published round model,
//! run local SGD on the private shard of the data, and package the result
//! as a subchain transaction.

use chainfl::device::{run_local_update, Behavior, DeviceProfile};
use chainfl::learning::evaluate_loss;
use chainfl::sim::RngFactory;
use chainfl::store::{get_params, MemoryStore};
use chainfl::task::{closed_form_optimum, generate_synthetic_regression};

fn main() {
    let task = generate_synthetic_regression(42, 4, 25, 6, 0.05).unwrap();
    let spec = &task.spec;
    println!("task {}: dim {}, {} devices", spec.task_id_root, spec.model_dim, 4);

    let factory = RngFactory::new(42);
    let mut store = MemoryStore::new();
    let w0 = spec.init_params.clone();
    let start = evaluate_loss(&w0, &task.test_set, &spec.loss_kind).unwrap();
    println!("initial test loss {:.4}", start.value);

    for device_id in 0..4u32 {
        let profile = DeviceProfile {
            device_id,
            dataset: task.plan.assignments[device_id as usize].clone(),
            battery: 0.9,
            network_quality: 0.8,
            willing: true,
            compute_delay: 10,
        };
        let mut train_rng = factory.stream("local_train", device_id as u64, 0);
        let mut attack_rng = factory.stream("attack", device_id as u64, 0);
        let update = run_local_update(
            &profile,
            &Behavior::Honest,
            &w0,
            spec,
            &spec.task_id_root,
            0,
            0,
            &mut store,
            &mut train_rng,
            &mut attack_rng,
        )
        .unwrap();
        let w = get_params(&store, &update.tx.params_hash).unwrap();
        let loss = evaluate_loss(&w, &task.test_set, &spec.loss_kind).unwrap();
        println!(
            "device {device_id}: {} samples, {} compute ticks, loss {:.4} -> tx {}",
            profile.dataset.len(),
            update.compute_ticks,
            loss.value,
            &update.tx.params_hash.to_hex()[..12],
        );
    }

    // The noiseless optimum bounds what any amount of training can reach.
    let opt = closed_form_optimum(task.regression_oracle.as_ref().unwrap()).unwrap();
    let floor = evaluate_loss(&opt, &task.test_set, &spec.loss_kind).unwrap();
    println!("least-squares floor {:.4}", floor.value);
}
