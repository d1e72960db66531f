//! End devices: local data holders that train on request and publish the
//! result as a subchain transaction. Behavior profiles cover honest
//! devices, stragglers (same payload, late delivery) and malicious devices
//! (honest-looking metadata around a poisoned parameter vector).

use crate::learning::{local_train, LearningError, ParamVector};
use crate::store::{put_params, ObjectStore, StoreError};
use crate::subchain::SubchainTx;
use crate::task::TaskSpec;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackKind {
    /// Replace the trained vector with pure noise of the given spread.
    GaussianNoise { sd: f64 },
    /// Negate every coordinate of the trained vector.
    SignFlip,
    /// Multiply the trained vector by a constant.
    Scale { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    Straggler { extra_delay: u64 },
    Malicious { attack: AttackKind },
}

/// A device as the shard sees it: identity, local data, liveness knobs and
/// a per-local-epoch compute cost in ticks.
#[derive(Debug, Clone)]
pub struct DeviceProfile {
    pub device_id: u32,
    pub dataset: crate::learning::LabeledDataset,
    pub battery: f64,
    pub network_quality: f64,
    pub willing: bool,
    pub compute_delay: u64,
}

impl DeviceProfile {
    pub fn sender_id(&self) -> String {
        format!("dev-{:04}", self.device_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub device_id: u32,
    pub willing: bool,
    pub battery: f64,
    pub network_quality: f64,
    pub dataset_size: u64,
    pub reported_at: u64,
}

pub fn report_status(p: &DeviceProfile, now: u64) -> StatusReport {
    StatusReport {
        device_id: p.device_id,
        willing: p.willing,
        battery: p.battery,
        network_quality: p.network_quality,
        dataset_size: p.dataset.len() as u64,
        reported_at: now,
    }
}

/// One step of the bounded random walk that battery and network quality
/// follow between rounds.
pub fn step_status_walk(p: &mut DeviceProfile, step: f64, floor: f64, rng: &mut impl Rng) {
    p.battery = (p.battery + step * rng.gen_range(-1.0..1.0)).clamp(floor, 1.0);
    p.network_quality = (p.network_quality + step * rng.gen_range(-1.0..1.0)).clamp(floor, 1.0);
}

#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub tx: SubchainTx,
    /// Ticks from the training request until the transaction reaches the
    /// subchain node, before network latency.
    pub compute_ticks: u64,
}

pub fn apply_attack(trained: &ParamVector, attack: &AttackKind, rng: &mut impl Rng) -> ParamVector {
    let values: Vec<f64> = match attack {
        AttackKind::GaussianNoise { sd } => {
            let normal = Normal::new(0.0, *sd).expect("positive sd");
            (0..trained.dim()).map(|_| normal.sample(rng)).collect()
        }
        AttackKind::SignFlip => trained.values().iter().map(|v| -v).collect(),
        AttackKind::Scale { factor } => trained.values().iter().map(|v| v * factor).collect(),
    };
    ParamVector::new(values).expect("attack output stays finite")
}

/// Trains on the basic round model and packages the result. The training
/// draws come from `train_rng` for every behavior, so a straggler's payload
/// is bit-identical to the honest one; attacks draw from the separate
/// `attack_rng` and touch only the parameter vector, never the metadata.
#[allow(clippy::too_many_arguments)]
pub fn run_local_update(
    profile: &DeviceProfile,
    behavior: &Behavior,
    w_brm: &ParamVector,
    spec: &TaskSpec,
    task_id: &str,
    round_no: u32,
    now: u64,
    store: &mut impl ObjectStore,
    train_rng: &mut impl Rng,
    attack_rng: &mut impl Rng,
) -> Result<LocalUpdate, DeviceError> {
    let trained = local_train(w_brm, &profile.dataset, &spec.hp, &spec.loss_kind, train_rng)?;
    let published = match behavior {
        Behavior::Malicious { attack } => apply_attack(&trained, attack, attack_rng),
        _ => trained,
    };
    let params_hash = put_params(store, &published)?;

    let base = spec.hp.local_epochs as u64 * profile.compute_delay;
    let compute_ticks = match behavior {
        Behavior::Straggler { extra_delay } => base + extra_delay,
        _ => base,
    };
    let sender = profile.sender_id();
    Ok(LocalUpdate {
        tx: SubchainTx {
            signature: format!("sig:{sender}"),
            sender_id: sender,
            task_id: task_id.to_string(),
            round_no,
            params_hash,
            timestamp: now + compute_ticks,
        },
        compute_ticks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{Label, LabeledDataset, Sample};
    use crate::store::MemoryStore;
    use crate::task::generate_synthetic_regression;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn test_profile() -> (DeviceProfile, TaskSpec) {
        let task = generate_synthetic_regression(5, 2, 10, 3, 0.0).unwrap();
        let profile = DeviceProfile {
            device_id: 7,
            dataset: task.plan.assignments[0].clone(),
            battery: 0.9,
            network_quality: 0.8,
            willing: true,
            compute_delay: 10,
        };
        (profile, task.spec)
    }

    #[test]
    fn status_report_snapshots_fields() {
        let (p, _) = test_profile();
        let r = report_status(&p, 42);
        assert_eq!(r.device_id, 7);
        assert_eq!(r.dataset_size, 10);
        assert_eq!(r.reported_at, 42);
        assert!(r.willing);
    }

    #[test]
    fn straggler_payload_matches_honest_bit_for_bit() {
        let (p, spec) = test_profile();
        let w = spec.init_params.clone();
        let mut store_a = MemoryStore::new();
        let mut store_b = MemoryStore::new();
        let honest = run_local_update(
            &p, &Behavior::Honest, &w, &spec, "task-x", 0, 100,
            &mut store_a, &mut ChaCha12Rng::seed_from_u64(9), &mut ChaCha12Rng::seed_from_u64(1),
        )
        .unwrap();
        let slow = run_local_update(
            &p, &Behavior::Straggler { extra_delay: 500 }, &w, &spec, "task-x", 0, 100,
            &mut store_b, &mut ChaCha12Rng::seed_from_u64(9), &mut ChaCha12Rng::seed_from_u64(1),
        )
        .unwrap();
        assert_eq!(honest.tx.params_hash, slow.tx.params_hash);
        assert_eq!(honest.tx.sender_id, slow.tx.sender_id);
        assert_eq!(slow.compute_ticks, honest.compute_ticks + 500);
    }

    #[test]
    fn tx_round_and_task_are_bound_to_request() {
        let (p, spec) = test_profile();
        let mut store = MemoryStore::new();
        let up = run_local_update(
            &p, &Behavior::Honest, &spec.init_params.clone(), &spec, "iter-3", 2, 50,
            &mut store, &mut ChaCha12Rng::seed_from_u64(0), &mut ChaCha12Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(up.tx.round_no, 2);
        assert_eq!(up.tx.task_id, "iter-3");
        assert!(!up.tx.signature.is_empty());
        assert!(store.contains(&up.tx.params_hash));
    }

    #[test]
    fn sign_flip_negates_and_scale_scales() {
        let w = ParamVector::new(vec![1.0, -2.0, 3.0]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let flipped = apply_attack(&w, &AttackKind::SignFlip, &mut rng);
        assert_eq!(flipped.values(), &[-1.0, 2.0, -3.0]);
        let scaled = apply_attack(&w, &AttackKind::Scale { factor: -4.0 }, &mut rng);
        assert_eq!(scaled.values(), &[-4.0, 8.0, -12.0]);
    }

    #[test]
    fn gaussian_noise_replaces_with_configured_spread() {
        let w = ParamVector::zeros(2000);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let noisy = apply_attack(&w, &AttackKind::GaussianNoise { sd: 10.0 }, &mut rng);
        let mean: f64 = noisy.values().iter().sum::<f64>() / 2000.0;
        let var: f64 = noisy.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2000.0;
        assert!(mean.abs() < 1.0, "mean {mean}");
        assert!((var.sqrt() - 10.0).abs() < 1.0, "sd {}", var.sqrt());
    }

    #[test]
    fn malicious_keeps_honest_metadata() {
        // The attack changes the parameter hash but not sender, round or the
        // local dataset, so aggregation weights stay truthful.
        let (p, spec) = test_profile();
        let w = spec.init_params.clone();
        let mut store_a = MemoryStore::new();
        let mut store_b = MemoryStore::new();
        let honest = run_local_update(
            &p, &Behavior::Honest, &w, &spec, "t", 0, 0,
            &mut store_a, &mut ChaCha12Rng::seed_from_u64(4), &mut ChaCha12Rng::seed_from_u64(8),
        )
        .unwrap();
        let bad = run_local_update(
            &p, &Behavior::Malicious { attack: AttackKind::SignFlip }, &w, &spec, "t", 0, 0,
            &mut store_b, &mut ChaCha12Rng::seed_from_u64(4), &mut ChaCha12Rng::seed_from_u64(8),
        )
        .unwrap();
        assert_ne!(honest.tx.params_hash, bad.tx.params_hash);
        assert_eq!(honest.tx.sender_id, bad.tx.sender_id);
        assert_eq!(honest.tx.round_no, bad.tx.round_no);
        assert_eq!(honest.compute_ticks, bad.compute_ticks);
    }

    #[test]
    fn status_walk_stays_in_bounds() {
        let data = LabeledDataset::new(vec![Sample { features: vec![1.0], label: Label::Real(0.0) }]).unwrap();
        let mut p = DeviceProfile {
            device_id: 0,
            dataset: data,
            battery: 0.5,
            network_quality: 0.5,
            willing: true,
            compute_delay: 1,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..1000 {
            step_status_walk(&mut p, 0.1, 0.2, &mut rng);
            assert!(p.battery >= 0.2 && p.battery <= 1.0);
            assert!(p.network_quality >= 0.2 && p.network_quality <= 1.0);
        }
    }
}
