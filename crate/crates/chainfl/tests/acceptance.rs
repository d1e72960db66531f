//! Acceptance gate: one test per release criterion, each asserting its
//! stated tolerance and wall-time budget. Failures print enough context to
//! diagnose without re-running.

use chainfl::baselines::{run_asynfl, run_fedavg, run_scenario};
use chainfl::config::{
    resolve, FaultAction, FaultSpec, Freshness, Paradigm, PlantedTx,
    ScenarioConfig, TaskDescriptor, TaskKindName,
};
use chainfl::device::AttackKind;
use chainfl::engine::{run_chainfl, RunEndKind};
use chainfl::learning::{
    asynfl_update, evaluate_loss, sgd_step, weighted_aggregate, Label, LabeledDataset, LossKind,
    MetricKind, ParamVector, Sample,
};
use chainfl::mainchain::{DagLedger, MainchainTx, TipStatus};
use chainfl::store::{hash_bytes, put_params, MemoryStore};
use chainfl::subchain::{validate_tx, InvalidReason, SubchainTx, TxVerdict};
use chainfl::task::{closed_form_optimum, PartitionScheme, TerminationRule, ValidationPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;
use std::time::Instant;

fn budget(name: &str, start: Instant, limit_s: f64) {
    let dt = start.elapsed().as_secs_f64();
    println!("ACCEPTANCE {name}: PASS ({dt:.2} s, budget {limit_s} s)");
    assert!(dt < limit_s, "{name} exceeded its {limit_s} s budget: took {dt:.2} s");
}

// --- 1. Aggregation exactness -------------------------------------------

#[test]
fn c01_aggregation_exactness() {
    let t0 = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    for case in 0..1000 {
        let k = rng.gen_range(1..=8);
        let dim = rng.gen_range(1..=16);
        let inputs: Vec<(ParamVector, u64)> = (0..k)
            .map(|_| {
                let vals: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
                (ParamVector::new(vals).unwrap(), rng.gen_range(1..=1000u64))
            })
            .collect();
        let got = weighted_aggregate(&inputs).unwrap();
        let total: f64 = inputs.iter().map(|(_, w)| *w as f64).sum();
        for j in 0..dim {
            let mut acc = 0.0;
            for (v, w) in &inputs {
                acc += v.values()[j] * (*w as f64);
            }
            let want = acc / total;
            let diff = (got.values()[j] - want).abs();
            assert!(diff <= 1e-12, "case {case} dim {j}: |{} - {want}| = {diff:e} > 1e-12",
                got.values()[j]);
        }
    }
    budget("aggregation-exactness", t0, 1.0);
}

// --- 2. Gradient correctness --------------------------------------------

#[test]
fn c02_gradient_correctness() {
    let t0 = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(202);
    for case in 0..200 {
        let loss = if case % 2 == 0 {
            LossKind::SquaredError
        } else {
            LossKind::CrossEntropy { classes: rng.gen_range(2..=4) }
        };
        let feat_dim = rng.gen_range(1..=6);
        let model_dim = loss.model_dim(feat_dim);
        let w = ParamVector::new((0..model_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let n = rng.gen_range(3..=8);
        let samples: Vec<Sample> = (0..n)
            .map(|_| {
                let features: Vec<f64> =
                    (0..feat_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let label = match loss {
                    LossKind::SquaredError => Label::Real(rng.gen_range(-2.0..2.0)),
                    LossKind::CrossEntropy { classes } => {
                        Label::Class(rng.gen_range(0..classes))
                    }
                };
                Sample { features, label }
            })
            .collect();
        let batch = LabeledDataset::new(samples).unwrap();

        let mu = 0.25;
        let (stepped, _) = sgd_step(&w, &batch, mu, &loss).unwrap();
        let grad: Vec<f64> = w
            .values()
            .iter()
            .zip(stepped.values())
            .map(|(a, b)| (a - b) / mu)
            .collect();

        let h = 1e-5;
        let mut fd = vec![0.0; model_dim];
        for i in 0..model_dim {
            let mut plus = w.values().to_vec();
            plus[i] += h;
            let mut minus = w.values().to_vec();
            minus[i] -= h;
            let lp = evaluate_loss(&ParamVector::new(plus).unwrap(), &batch, &loss).unwrap().value;
            let lm = evaluate_loss(&ParamVector::new(minus).unwrap(), &batch, &loss).unwrap().value;
            fd[i] = (lp - lm) / (2.0 * h);
        }
        let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
        let rel = num / den;
        assert!(rel <= 1e-4, "case {case} ({loss:?}): relative gradient error {rel:e} > 1e-4");
    }
    budget("gradient-correctness", t0, 5.0);
}

// --- 3. Honest convergence ----------------------------------------------

fn honest_cfg(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        name: "honest".into(),
        seed,
        paradigm: Paradigm::ChainFl,
        shards: 3,
        nodes_per_shard: 3,
        devices_per_round: 10,
        candidate_tips: 3,
        approved_tips: 2,
        rounds_per_iteration: 1,
        malicious_ratio: 0.0,
        local_epochs: 5,
        batch_size: 10,
        learning_rate: 0.1,
        task: TaskDescriptor {
            kind: TaskKindName::Regression,
            model_dim: 5,
            samples_per_device: 40,
            noise_sd: 0.0,
            ..Default::default()
        },
        epoch_hard_cap: 200,
        termination: TerminationRule::MaxGlobalEpochs { epochs: 10_000 },
        ..Default::default()
    }
}

#[test]
fn c03_honest_convergence() {
    let t0 = Instant::now();
    let mut passes = 0;
    let mut report = Vec::new();
    for seed in 0..10u64 {
        // The optimum depends on the generated task, so resolve once to get
        // the oracle, then rerun with the loss threshold as the stop rule.
        let probe = resolve(&honest_cfg(seed)).unwrap();
        let oracle = probe.task.regression_oracle.as_ref().expect("regression oracle");
        let w_star = closed_form_optimum(oracle).unwrap();
        let opt_loss = evaluate_loss(&w_star, &probe.task.test_set, &LossKind::SquaredError)
            .unwrap()
            .value;
        let target = opt_loss + 1e-3;

        let mut cfg = honest_cfg(seed);
        cfg.termination =
            TerminationRule::MetricThreshold { metric: MetricKind::Loss, value: target };
        let out = run_chainfl(&resolve(&cfg).unwrap()).unwrap();
        let final_loss = out.final_loss.unwrap_or(f64::INFINITY);
        let ok = final_loss <= target && out.epochs <= 200;
        if ok {
            passes += 1;
        }
        report.push(format!(
            "seed {seed}: epochs={} loss={final_loss:.3e} target={target:.3e} {}",
            out.epochs,
            if ok { "ok" } else { "MISS" }
        ));
    }
    assert!(passes >= 9, "honest convergence in {passes}/10 seeds (need 9):\n{}",
        report.join("\n"));
    budget("honest-convergence", t0, 120.0);
}

// --- 4. Robustness ordering ---------------------------------------------

fn robust_cfg(seed: u64, paradigm: Paradigm, malicious_ratio: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: "robust".into(),
        seed,
        paradigm,
        shards: 3,
        nodes_per_shard: 3,
        devices_per_round: 10,
        candidate_tips: 3,
        approved_tips: 2,
        rounds_per_iteration: 1,
        malicious_ratio,
        local_epochs: 5,
        batch_size: 10,
        learning_rate: 0.1,
        task: TaskDescriptor {
            kind: TaskKindName::Classification,
            model_dim: 8,
            classes: 4,
            samples_per_device: 30,
            partition: PartitionScheme::IidRandom,
            ..Default::default()
        },
        attack: AttackKind::GaussianNoise { sd: 4.0 },
        gradient_budget: Some(1500),
        termination: TerminationRule::MaxGlobalEpochs { epochs: 10_000 },
        ..Default::default()
    }
}

#[test]
fn c04_robustness_ordering() {
    let t0 = Instant::now();
    let mut beats_both = 0;
    let mut drop_ok = 0;
    let mut report = Vec::new();
    for seed in 0..10u64 {
        let acc = |paradigm: Paradigm, ratio: f64| -> f64 {
            let rs = resolve(&robust_cfg(seed, paradigm, ratio)).unwrap();
            let out = run_scenario(&rs).unwrap();
            let m = out.final_metric.expect("final metric");
            assert_eq!(m.kind, MetricKind::Accuracy);
            m.value
        };
        let chain_bad = acc(Paradigm::ChainFl, 0.3);
        let fed_bad = acc(Paradigm::FedAvg, 0.3);
        let asyn_bad = acc(Paradigm::AsynFl, 0.3);
        let chain_clean = acc(Paradigm::ChainFl, 0.0);
        let fed_clean = acc(Paradigm::FedAvg, 0.0);

        let beats = chain_bad > fed_bad && chain_bad > asyn_bad;
        let chain_drop = chain_clean - chain_bad;
        let fed_drop = fed_clean - fed_bad;
        let drops = chain_drop <= fed_drop / 3.0;
        if beats {
            beats_both += 1;
        }
        if drops {
            drop_ok += 1;
        }
        report.push(format!(
            "seed {seed}: chain={chain_bad:.3} fed={fed_bad:.3} asyn={asyn_bad:.3} \
             chain_drop={chain_drop:.3} fed_drop={fed_drop:.3} beats={beats} drop_ok={drops}"
        ));
    }
    assert!(
        beats_both >= 8,
        "ChainFL beat both baselines in {beats_both}/10 seeds (need 8):\n{}",
        report.join("\n")
    );
    assert!(
        drop_ok >= 7,
        "ChainFL drop within a third of FedAvg's in {drop_ok}/10 seeds (need 7):\n{}",
        report.join("\n")
    );
    budget("robustness-ordering", t0, 600.0);
}

// --- 5. Crash fault tolerance -------------------------------------------

#[test]
fn c05_crash_fault_tolerance() {
    let t0 = Instant::now();

    // Leader crash with b = 2a+1 = 3, a = 1: the shard re-elects and the
    // run still converges.
    let base = ScenarioConfig {
        name: "crash".into(),
        seed: 5,
        shards: 1,
        nodes_per_shard: 3,
        devices_per_round: 6,
        candidate_tips: 2,
        approved_tips: 1,
        local_epochs: 5,
        batch_size: 10,
        learning_rate: 0.1,
        task: TaskDescriptor {
            kind: TaskKindName::Regression,
            model_dim: 4,
            samples_per_device: 30,
            noise_sd: 0.0,
            ..Default::default()
        },
        termination: TerminationRule::MetricThreshold { metric: MetricKind::Loss, value: 0.02 },
        epoch_hard_cap: 300,
        ..Default::default()
    };
    let mut crashed = base.clone();
    crashed.faults =
        vec![FaultSpec { at: 300, shard: 0, node: 0, action: FaultAction::Crash }];

    let out_crash = run_chainfl(&resolve(&crashed).unwrap()).unwrap();
    assert_eq!(out_crash.end, RunEndKind::Stopped, "crashed-leader run must still converge");
    let election_t = out_crash
        .trace
        .of_kind("election")
        .map(|e| e.t)
        .next()
        .expect("leader crash must trigger an election");
    assert!(election_t > 300, "election must follow the crash, got t={election_t}");
    let resumed = out_crash
        .trace
        .of_kind("shard_model_submitted")
        .any(|e| e.t > election_t);
    assert!(resumed, "shard must complete an iteration after re-election");

    let out_clean = run_chainfl(&resolve(&base).unwrap()).unwrap();
    assert_eq!(out_clean.end, RunEndKind::Stopped, "no-crash run must converge");
    assert!(out_clean.final_loss.unwrap() <= 0.02);
    assert!(out_crash.final_loss.unwrap() <= 0.02);

    // Crash 2 of 3 nodes before any block exists: no block ever commits and
    // the shard makes no progress.
    let mut majority_dead = base.clone();
    majority_dead.name = "crash-majority".into();
    majority_dead.faults = vec![
        FaultSpec { at: 5, shard: 0, node: 1, action: FaultAction::Crash },
        FaultSpec { at: 5, shard: 0, node: 2, action: FaultAction::Crash },
    ];
    majority_dead.t_max = Some(15_000);
    let out_dead = run_chainfl(&resolve(&majority_dead).unwrap()).unwrap();
    assert_eq!(out_dead.end, RunEndKind::TimeLimit, "stalled shard cannot reach the stop rule");
    assert_eq!(
        out_dead.trace.of_kind("block_committed").count(),
        0,
        "no block may commit after a majority crash"
    );
    for log in &out_dead.shard_logs[0] {
        assert!(log.is_empty(), "committed logs must stay empty");
    }
    assert_eq!(out_dead.epochs, 0, "no shard model can reach the mainchain");

    budget("crash-fault-tolerance", t0, 60.0);
}

// --- 6. Virtual pruning -------------------------------------------------

#[test]
fn c06_virtual_pruning() {
    let t0 = Instant::now();
    let base = ScenarioConfig {
        name: "prune".into(),
        seed: 11,
        shards: 1,
        nodes_per_shard: 3,
        devices_per_round: 6,
        candidate_tips: 2,
        approved_tips: 1,
        local_epochs: 5,
        batch_size: 10,
        task: TaskDescriptor {
            kind: TaskKindName::Classification,
            model_dim: 4,
            classes: 2,
            samples_per_device: 30,
            partition: PartitionScheme::IidRandom,
            ..Default::default()
        },
        freshness: Freshness::Ticks(8),
        // Admit-all validation: this scenario exercises DAG pruning, and the
        // basic-round-model policy would stall once accuracy saturates.
        validation: ValidationPolicy::Fixed { value: -1.0 },
        termination: TerminationRule::MaxGlobalEpochs { epochs: 5 },
        ..Default::default()
    };
    let mut planted = base.clone();
    planted.planted_txs = vec![
        PlantedTx { at: 45, params: vec![0.25; 8], sender: "planted".into() },
        PlantedTx { at: 50, params: vec![-0.4; 8], sender: "planted".into() },
    ];

    let out_planted = run_chainfl(&resolve(&planted).unwrap()).unwrap();
    let out_clean = run_chainfl(&resolve(&base).unwrap()).unwrap();
    assert_eq!(out_planted.end, RunEndKind::Stopped);
    assert_eq!(out_clean.end, RunEndKind::Stopped);

    // Every planted transaction ends Pruned, exactly at its deadline.
    let planted_ids: Vec<_> = out_planted
        .ledger
        .vertices_in_order()
        .filter(|v| v.sender_shard_id == "planted")
        .map(|v| v.tx_id)
        .collect();
    assert_eq!(planted_ids.len(), 2, "both planted transactions must be accepted");
    for (id, deadline) in planted_ids.iter().zip([45 + 8u64, 50 + 8]) {
        let rec = out_planted.ledger.record(id).unwrap();
        assert_eq!(rec.status, TipStatus::Pruned, "planted tx must be pruned");
        assert_eq!(rec.candidacy_count, 0, "planted tx must never gain candidacy");
        let pruned_at = out_planted
            .trace
            .of_kind("tip_pruned")
            .find(|e| e.detail["tx_id"] == id.to_hex())
            .map(|e| e.t)
            .expect("prune event recorded");
        assert_eq!(pruned_at, deadline, "pruned exactly at received_at + F");
    }

    // Pruned vertices never appear in any approve set.
    for v in out_planted.ledger.vertices_in_order() {
        for a in &v.approves {
            assert!(
                !planted_ids.contains(a),
                "tx {} approves a planted vertex",
                v.tx_id.to_hex()
            );
        }
    }

    // The planted run's final model matches the clean run's.
    let m_planted = out_planted.final_metric.unwrap();
    let m_clean = out_clean.final_metric.unwrap();
    assert_eq!(m_planted.kind, MetricKind::Accuracy);
    assert!(
        (m_planted.value - m_clean.value).abs() <= 1e-6,
        "final accuracy diverged: planted {} vs clean {}",
        m_planted.value,
        m_clean.value
    );

    budget("virtual-pruning", t0, 60.0);
}

// --- 7. DAG structural invariants ---------------------------------------

/// Naive replay of the ledger rules, kept deliberately dumb: a status is
/// recomputed from full history rather than updated in place.
#[derive(Default)]
struct DagOracle {
    ids: Vec<chainfl::store::ContentHash>,
    received: BTreeMap<chainfl::store::ContentHash, u64>,
    deadline: BTreeMap<chainfl::store::ContentHash, Option<u64>>,
    candidacy: BTreeMap<chainfl::store::ContentHash, u32>,
    approved: BTreeMap<chainfl::store::ContentHash, bool>,
    pruned: BTreeMap<chainfl::store::ContentHash, bool>,
    genesis: Option<chainfl::store::ContentHash>,
}

impl DagOracle {
    fn add(&mut self, id: chainfl::store::ContentHash, now: u64, deadline: Option<u64>) {
        self.ids.push(id);
        self.received.insert(id, now);
        self.deadline.insert(id, deadline);
        self.candidacy.insert(id, 0);
        self.approved.insert(id, false);
        self.pruned.insert(id, false);
    }

    fn selectable(&self, now: u64) -> Vec<chainfl::store::ContentHash> {
        self.ids
            .iter()
            .filter(|id| {
                !self.approved[*id]
                    && !self.pruned[*id]
                    && !(self.candidacy[*id] == 0
                        && Some(**id) != self.genesis
                        && self.deadline[*id].is_some_and(|d| now >= d))
            })
            .copied()
            .collect()
    }

    fn status(&self, id: &chainfl::store::ContentHash) -> TipStatus {
        if self.approved[id] {
            TipStatus::Approved
        } else if self.pruned[id] {
            TipStatus::Pruned
        } else {
            TipStatus::FreshTip
        }
    }
}

#[test]
fn c07_dag_structural_invariants() {
    let t0 = Instant::now();
    let mut ops_done = 0u64;
    let mut seq = 0u64;
    while ops_done < 100_000 {
        let mut rng = ChaCha12Rng::seed_from_u64(7000 + seq);
        seq += 1;
        let freshness = rng.gen_range(5..50u64);
        let mut dag = DagLedger::new(Some(freshness));
        let mut oracle = DagOracle::default();
        let init_hash = hash_bytes(b"init");
        let g = dag.create_genesis(b"doc", "task", init_hash, 0).unwrap();
        oracle.genesis = Some(g);
        oracle.add(g, 0, None);

        let mut now = 0u64;
        for _ in 0..1000 {
            ops_done += 1;
            now += rng.gen_range(0..5);
            match rng.gen_range(0..100) {
                0..=59 => {
                    // Submit a tx approving 1..=3 known vertices (some may
                    // already be pruned; the ledger must reject those).
                    let k = rng.gen_range(1..=3usize).min(oracle.ids.len());
                    let mut approves = Vec::new();
                    for _ in 0..k {
                        let pick = oracle.ids[rng.gen_range(0..oracle.ids.len())];
                        if !approves.contains(&pick) {
                            approves.push(pick);
                        }
                    }
                    let tx = MainchainTx::new(
                        format!("s{}", rng.gen_range(0..4)),
                        "task".into(),
                        hash_bytes(&now.to_le_bytes()),
                        approves.clone(),
                        now,
                    );
                    let id = tx.tx_id;
                    let legal = !approves.iter().any(|a| oracle.pruned[a]);
                    let dup = oracle.ids.contains(&id);
                    match dag.submit_tx(tx, now) {
                        Ok(()) => {
                            assert!(legal && !dup, "ledger accepted an illegal submit");
                            for a in &approves {
                                oracle.approved.insert(*a, true);
                            }
                            oracle.add(id, now, Some(now + freshness));
                        }
                        Err(_) => {
                            assert!(!legal || dup, "ledger rejected a legal submit");
                        }
                    }
                }
                60..=84 => {
                    let eta = rng.gen_range(1..=4usize);
                    let before = oracle.selectable(now);
                    let tips = dag.request_tips(eta, now, &mut rng).unwrap();
                    // A request first applies due pruning; mirror it.
                    for id in oracle.ids.clone() {
                        if oracle.status(&id) == TipStatus::FreshTip
                            && oracle.candidacy[&id] == 0
                            && Some(id) != oracle.genesis
                            && oracle.deadline[&id].is_some_and(|d| now >= d)
                        {
                            oracle.pruned.insert(id, true);
                        }
                    }
                    if before.is_empty() {
                        // Fallback: latest approved vertex, else genesis; no
                        // candidacy is granted.
                        assert_eq!(tips.len(), 1, "fallback returns one vertex");
                        let fid = tips[0].tx_id;
                        assert!(
                            oracle.approved[&fid] || Some(fid) == oracle.genesis,
                            "fallback must be an approved vertex or genesis"
                        );
                    } else {
                        assert_eq!(tips.len(), eta.min(before.len()));
                        for t in &tips {
                            assert!(
                                before.contains(&t.tx_id),
                                "drawn tip was not selectable"
                            );
                            *oracle.candidacy.get_mut(&t.tx_id).unwrap() += 1;
                        }
                    }
                }
                _ => {
                    let removed = dag.prune_expired(now);
                    let mut expect = Vec::new();
                    for id in oracle.ids.clone() {
                        if oracle.status(&id) == TipStatus::FreshTip
                            && oracle.candidacy[&id] == 0
                            && Some(id) != oracle.genesis
                            && oracle.deadline[&id].is_some_and(|d| now >= d)
                        {
                            oracle.pruned.insert(id, true);
                            expect.push(id);
                        }
                    }
                    assert_eq!(removed, expect, "prune sets diverged at t={now}");
                }
            }
        }

        // End of sequence: full state comparison against the oracle.
        assert!(dag.verify_structure(), "structure check failed (seq {seq})");
        assert_eq!(dag.len(), oracle.ids.len());
        for id in &oracle.ids {
            let rec = dag.record(id).unwrap();
            assert_eq!(rec.status, oracle.status(id), "status mismatch for {}", id.to_hex());
            assert_eq!(rec.candidacy_count, oracle.candidacy[id]);
        }
        assert_eq!(dag.selectable_ids(now), oracle.selectable(now), "tip sets diverged");
    }
    budget("dag-structural-invariants", t0, 30.0);
}

// --- 8. Determinism across scenarios ------------------------------------

#[test]
fn c08_determinism_across_scenarios() {
    let t0 = Instant::now();
    let small_reg = TaskDescriptor {
        kind: TaskKindName::Regression,
        model_dim: 3,
        samples_per_device: 12,
        ..Default::default()
    };
    let small_cls = TaskDescriptor {
        kind: TaskKindName::Classification,
        model_dim: 4,
        classes: 2,
        samples_per_device: 12,
        partition: PartitionScheme::IidRandom,
        ..Default::default()
    };
    let scenarios: Vec<ScenarioConfig> = vec![
        ScenarioConfig {
            name: "det-chain".into(),
            seed: 21,
            shards: 2,
            devices_per_round: 4,
            local_epochs: 2,
            batch_size: 5,
            task: small_reg.clone(),
            termination: TerminationRule::MaxGlobalEpochs { epochs: 3 },
            ..Default::default()
        },
        ScenarioConfig {
            name: "det-fedavg".into(),
            seed: 22,
            paradigm: Paradigm::FedAvg,
            shards: 1,
            devices_per_round: 4,
            local_epochs: 2,
            batch_size: 5,
            task: small_cls.clone(),
            termination: TerminationRule::MaxGlobalEpochs { epochs: 4 },
            ..Default::default()
        },
        ScenarioConfig {
            name: "det-asynfl".into(),
            seed: 23,
            paradigm: Paradigm::AsynFl,
            shards: 1,
            devices_per_round: 4,
            straggler_ratio: 0.25,
            local_epochs: 2,
            batch_size: 5,
            task: small_reg.clone(),
            termination: TerminationRule::MaxGlobalEpochs { epochs: 4 },
            ..Default::default()
        },
        ScenarioConfig {
            name: "det-faults".into(),
            seed: 24,
            shards: 2,
            devices_per_round: 4,
            malicious_ratio: 0.25,
            local_epochs: 2,
            batch_size: 5,
            task: small_reg,
            termination: TerminationRule::MaxGlobalEpochs { epochs: 4 },
            faults: vec![
                FaultSpec { at: 150, shard: 0, node: 0, action: FaultAction::Crash },
                FaultSpec { at: 700, shard: 0, node: 0, action: FaultAction::Recover },
            ],
            ..Default::default()
        },
        ScenarioConfig {
            name: "det-planted".into(),
            seed: 25,
            shards: 1,
            devices_per_round: 4,
            status_walk_step: 0.05,
            local_epochs: 2,
            batch_size: 5,
            task: small_cls,
            freshness: Freshness::Ticks(10),
            planted_txs: vec![PlantedTx {
                at: 40,
                params: vec![0.1; 8],
                sender: "planted".into(),
            }],
            termination: TerminationRule::MaxGlobalEpochs { epochs: 3 },
            ..Default::default()
        },
    ];
    for cfg in scenarios {
        let a = run_scenario(&resolve(&cfg).unwrap()).unwrap();
        let b = run_scenario(&resolve(&cfg).unwrap()).unwrap();
        assert_eq!(
            chainfl::metrics::to_csv(&a.rows),
            chainfl::metrics::to_csv(&b.rows),
            "CSV bytes diverged for {}",
            cfg.name
        );
        assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl(), "trace diverged for {}", cfg.name);
        assert_eq!(a.dag_export, b.dag_export, "DAG export diverged for {}", cfg.name);
    }
    budget("determinism-across-scenarios", t0, 120.0);
}

// --- 9. AsynFL rule exactness -------------------------------------------

#[test]
fn c09_asynfl_rule_exactness() {
    let t0 = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(909);
    for _ in 0..500 {
        let dim = rng.gen_range(1..=32);
        let g: Vec<f64> = (0..dim).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let l: Vec<f64> = (0..dim).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let merged = asynfl_update(
            &ParamVector::new(g.clone()).unwrap(),
            &ParamVector::new(l.clone()).unwrap(),
        )
        .unwrap();
        for i in 0..dim {
            let want = 0.5 * g[i] + 0.5 * l[i];
            assert_eq!(
                merged.values()[i].to_bits(),
                want.to_bits(),
                "midpoint must be bit-exact at index {i}"
            );
        }
    }
    budget("asynfl-rule-exactness", t0, 5.0);
}

// --- 10. Strict validation threshold ------------------------------------

#[test]
fn c10_strict_validation_threshold() {
    let t0 = Instant::now();
    // Two classes, four samples, a zero model: equal logits make argmax
    // pick class 0, so accuracy is exactly the fraction of class-0 labels.
    let test = LabeledDataset::new(vec![
        Sample { features: vec![1.0, 0.0], label: Label::Class(0) },
        Sample { features: vec![0.0, 1.0], label: Label::Class(0) },
        Sample { features: vec![1.0, 1.0], label: Label::Class(1) },
        Sample { features: vec![0.5, 0.5], label: Label::Class(1) },
    ])
    .unwrap();
    let loss = LossKind::CrossEntropy { classes: 2 };
    let w = ParamVector::zeros(4);
    let mut store = MemoryStore::new();
    let h = put_params(&mut store, &w).unwrap();
    let tx = SubchainTx {
        sender_id: "dev-0001".into(),
        task_id: "t".into(),
        round_no: 0,
        params_hash: h,
        timestamp: 10,
        signature: "sig:dev-0001".into(),
    };

    // Model accuracy == A_tau: strictly-greater rule must reject.
    match validate_tx(&tx, &test, &loss, 0.5, &store) {
        TxVerdict::Invalid(InvalidReason::BelowThreshold { score, threshold }) => {
            assert_eq!(score, 0.5);
            assert_eq!(threshold, 0.5);
        }
        other => panic!("accuracy exactly at threshold must be rejected, got {other:?}"),
    }
    // A hair below the model's accuracy: admitted.
    match validate_tx(&tx, &test, &loss, 0.5 - 1e-9, &store) {
        TxVerdict::Valid { score } => assert_eq!(score, 0.5),
        other => panic!("score above threshold must be accepted, got {other:?}"),
    }
    budget("strict-validation-threshold", t0, 5.0);
}

// --- Cross-checks shared by several criteria ----------------------------

#[test]
fn gradient_accounting_identity() {
    // One epoch with S_d=10, E=5 over 3 shards adds 150 gradients.
    let cfg = ScenarioConfig {
        name: "acct".into(),
        seed: 2,
        shards: 3,
        devices_per_round: 10,
        local_epochs: 5,
        batch_size: 10,
        task: TaskDescriptor {
            kind: TaskKindName::Regression,
            model_dim: 3,
            samples_per_device: 20,
            ..Default::default()
        },
        termination: TerminationRule::MaxGlobalEpochs { epochs: 2 },
        quorum_fraction: 1.0,
        validation: ValidationPolicy::Fixed { value: 1e30 },
        round_timeout: Some(100_000),
        ..Default::default()
    };
    let out = run_chainfl(&resolve(&cfg).unwrap()).unwrap();
    let finishes = out.trace.of_kind("device_finish").count() as u64;
    assert_eq!(out.gradients, finishes * 5, "gradients == completed trainings x E");
    // Two full epochs of 3 shards x 10 devices x 5 epochs = 300, plus
    // whatever the aborted drain round already finished.
    assert!(out.gradients >= 300, "at least two full epochs of work, got {}", out.gradients);
    let at_epoch2 = out
        .rows
        .iter()
        .find(|r| r.global_epoch >= 2)
        .expect("row at the stop epoch");
    assert_eq!(at_epoch2.global_epoch, 2);
}

#[test]
fn fedavg_and_asynfl_share_the_device_pool() {
    // Fairness: identical seeds give every paradigm the same partition,
    // profiles and behaviors.
    let mk = |p: Paradigm| {
        let mut cfg = robust_cfg(7, p, 0.2);
        cfg.gradient_budget = Some(300);
        resolve(&cfg).unwrap()
    };
    let a = mk(Paradigm::ChainFl);
    let b = mk(Paradigm::FedAvg);
    let c = mk(Paradigm::AsynFl);
    for ((pa, pb), pc) in a.profiles.iter().zip(&b.profiles).zip(&c.profiles) {
        assert_eq!(pa.device_id, pb.device_id);
        assert_eq!(pa.dataset, pb.dataset);
        assert_eq!(pa.dataset, pc.dataset);
        assert_eq!(pa.compute_delay, pb.compute_delay);
    }
    assert_eq!(a.behaviors, b.behaviors);
    assert_eq!(a.behaviors, c.behaviors);
}

#[test]
fn no_rows_after_stop_drain() {
    let cfg = ScenarioConfig {
        name: "drain".into(),
        seed: 9,
        shards: 2,
        devices_per_round: 4,
        local_epochs: 2,
        batch_size: 5,
        task: TaskDescriptor {
            kind: TaskKindName::Regression,
            model_dim: 3,
            samples_per_device: 12,
            ..Default::default()
        },
        termination: TerminationRule::MaxGlobalEpochs { epochs: 3 },
        ..Default::default()
    };
    let out = run_chainfl(&resolve(&cfg).unwrap()).unwrap();
    let stop_t = out.trace.of_kind("stop").map(|e| e.t).next().expect("stop fired");
    for r in &out.rows {
        assert!(r.sim_time <= stop_t, "row emitted after stop at {}: {:?}", stop_t, r);
    }
    // fedavg/asynfl runs end Stopped too, with rows cut at the stop point.
    let mut fcfg = cfg.clone();
    fcfg.paradigm = Paradigm::FedAvg;
    let f = run_fedavg(&resolve(&fcfg).unwrap()).unwrap();
    assert_eq!(f.end, RunEndKind::Stopped);
    let mut acfg = cfg;
    acfg.paradigm = Paradigm::AsynFl;
    let ar = run_asynfl(&resolve(&acfg).unwrap()).unwrap();
    assert_eq!(ar.end, RunEndKind::Stopped);
}
