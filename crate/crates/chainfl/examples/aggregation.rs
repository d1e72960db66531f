//! The three aggregation rules side by side: sample-count weighting for
//! shard rounds, the uniform mean used for basic iteration models, and the
//! half-half asynchronous merge.

use chainfl::learning::{asynfl_update, uniform_aggregate, weighted_aggregate, ParamVector};

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec()).unwrap()
}

fn show(label: &str, w: &ParamVector) {
    let vals: Vec<String> = w.values().iter().map(|v| format!("{v:+.3}")).collect();
    println!("{label:22} [{}]", vals.join(", "));
}

fn main() {
    let updates = vec![
        (pv(&[1.0, 0.0, -2.0]), 30u64),
        (pv(&[0.4, 0.8, -1.0]), 10),
        (pv(&[0.0, -0.4, 0.6]), 20),
    ];
    for (i, (w, n)) in updates.iter().enumerate() {
        show(&format!("device {i} (n={n})"), w);
    }

    // Round aggregation: each model counts in proportion to the samples
    // that produced it.
    let weighted = weighted_aggregate(&updates).unwrap();
    show("weighted mean", &weighted);

    // Basic iteration models average the selected tips with equal say,
    // whatever shard sizes produced them.
    let tips: Vec<ParamVector> = updates.iter().map(|(w, _)| w.clone()).collect();
    let uniform = uniform_aggregate(&tips).unwrap();
    show("uniform mean", &uniform);

    // The asynchronous rule folds one local model at a time into the
    // global one, half and half, so late arrivals still move the model.
    let mut global = pv(&[0.0, 0.0, 0.0]);
    for (i, (w, _)) in updates.iter().enumerate() {
        global = asynfl_update(&global, w).unwrap();
        show(&format!("after merge {i}"), &global);
    }
}
