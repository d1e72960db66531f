//! FedAvg and AsynFL reference paradigms. Both reuse the exact local
//! training path of the main protocol (same rng streams, same attack
//! application), so cross-paradigm comparisons differ only in coordination,
//! never in arithmetic.

use crate::config::{Paradigm, ResolvedScenario};
use crate::device::run_local_update;
use crate::engine::{EngineError, RunEndKind, RunOutput};
use crate::learning::{
    asynfl_update, evaluate_loss, primary_metric, weighted_aggregate, MetricValue, ParamVector,
};
use crate::mainchain::{check_stop, DagLedger};
use crate::metrics::MetricsRow;
use crate::sim::rng::RngFactory;
use crate::sim::trace::Trace;
use crate::sim::EventQueue;
use crate::store::{get_params, MemoryStore};
use crate::subchain::{select_devices, SubchainTx};
use crate::task::TerminationRule;
use rand::Rng;
use serde_json::json;
use std::collections::BTreeMap;

fn empty_ledger_output(
    paradigm: Paradigm,
    rows: Vec<MetricsRow>,
    trace: Trace,
    store: MemoryStore,
    final_params: ParamVector,
    final_metric: Option<MetricValue>,
    final_loss: Option<f64>,
    epochs: u32,
    gradients: u64,
    end: RunEndKind,
    end_time: u64,
) -> RunOutput {
    let _ = paradigm;
    RunOutput {
        rows,
        trace,
        dag_export: String::new(),
        final_params: Some(final_params),
        final_metric,
        final_loss,
        epochs,
        gradients,
        notes: Vec::new(),
        end,
        end_time,
        ledger: DagLedger::new(None),
        store,
        shard_logs: Vec::new(),
    }
}

/// Synchronous federated averaging over the whole device pool. One epoch:
/// select, train everyone, aggregate by dataset size. No validation, no
/// chain; the server is trusted and updates are taken as sent.
pub fn run_fedavg(rs: &ResolvedScenario) -> Result<RunOutput, EngineError> {
    let cfg = &rs.cfg;
    let spec = &rs.task.spec;
    let factory = RngFactory::new(cfg.seed);
    let mut store = MemoryStore::new();
    let mut trace = Trace::new();
    let mut rows = Vec::new();

    let profiles: BTreeMap<u32, _> =
        rs.profiles.iter().map(|p| (p.device_id, p.clone())).collect();
    let mean_intra = (cfg.latency.intra[0] + cfg.latency.intra[1]).div_ceil(2);

    let mut w = spec.init_params.clone();
    let mut gradients: u64 = 0;
    let mut train_counters: BTreeMap<u32, u64> = BTreeMap::new();
    let mut attack_counters: BTreeMap<u32, u64> = BTreeMap::new();
    let mut now: u64 = 0;
    let mut epochs_done: u32 = 0;
    let mut end = RunEndKind::TimeLimit;
    let mut final_metric = None;
    let mut final_loss = None;

    let emit = |rows: &mut Vec<MetricsRow>,
                    trace: &mut Trace,
                    w: &ParamVector,
                    epoch: u32,
                    gradients: u64,
                    now: u64|
     -> Option<MetricValue> {
        let metric = primary_metric(w, &rs.task.test_set, &spec.loss_kind).ok()?;
        let loss = evaluate_loss(w, &rs.task.test_set, &spec.loss_kind).ok()?.value;
        rows.push(MetricsRow {
            paradigm: Paradigm::FedAvg,
            seed: cfg.seed,
            global_epoch: epoch,
            gradients,
            sim_time: now,
            metric_kind: metric.kind,
            metric_value: metric.value,
            loss,
        });
        trace.record(now, "server", "eval", json!({
            "epoch": epoch, "gradients": gradients, "metric": metric.value, "loss": loss,
        }));
        Some(metric)
    };

    'outer: for epoch in 0..cfg.epoch_hard_cap {
        if let TerminationRule::MaxGlobalEpochs { epochs } = cfg.termination {
            if epoch >= epochs {
                end = RunEndKind::Stopped;
                break;
            }
        }
        let reports: Vec<_> = profiles
            .values()
            .map(|p| crate::device::report_status(p, now))
            .collect();
        let mut sel_rng = factory.stream("device_select", 0, epoch as u64);
        let Some(selected) = select_devices(
            &reports,
            cfg.devices_per_round,
            cfg.battery_min,
            cfg.network_min,
            &mut sel_rng,
        ) else {
            trace.record(now, "server", "selection_postponed", json!({ "epoch": epoch }));
            now += cfg.selection_retry_delay;
            continue;
        };
        trace.record(now, "server", "round_start", json!({
            "epoch": epoch, "selected": selected,
        }));

        let mut arrived: BTreeMap<u32, (ParamVector, u64)> = BTreeMap::new();
        let mut max_ticks: u64 = 0;
        for &d in &selected {
            let tc = {
                let c = train_counters.entry(d).or_insert(0);
                let v = *c;
                *c += 1;
                v
            };
            let ac = {
                let c = attack_counters.entry(d).or_insert(0);
                let v = *c;
                *c += 1;
                v
            };
            let mut train_rng = factory.stream("local_train", d as u64, tc);
            let mut attack_rng = factory.stream("attack", d as u64, ac);
            let update = run_local_update(
                &profiles[&d],
                &rs.behaviors[d as usize],
                &w,
                spec,
                &spec.task_id_root,
                epoch,
                now,
                &mut store,
                &mut train_rng,
                &mut attack_rng,
            )
            .map_err(|e| EngineError::Internal(format!("fedavg device {d}: {e}")))?;
            max_ticks = max_ticks.max(update.compute_ticks);
            gradients += cfg.local_epochs as u64;
            let params = get_params(&store, &update.tx.params_hash)
                .map_err(|e| EngineError::Internal(e.to_string()))?;
            arrived.insert(d, (params, profiles[&d].dataset.len() as u64));
            if let Some(budget) = cfg.gradient_budget {
                if gradients >= budget {
                    trace.record(now, "server", "stop", json!({ "reason": "gradient_budget" }));
                    end = RunEndKind::Stopped;
                    break 'outer;
                }
            }
        }

        let inputs: Vec<(ParamVector, u64)> = arrived.into_values().collect();
        w = weighted_aggregate(&inputs).map_err(|e| EngineError::Internal(e.to_string()))?;
        now += max_ticks + 2 * mean_intra + 2;
        epochs_done = epoch + 1;
        trace.record(now, "server", "aggregated", json!({
            "epoch": epochs_done, "models": inputs.len(),
        }));

        let metric = emit(&mut rows, &mut trace, &w, epochs_done, gradients, now);
        if let Some(m) = metric {
            final_metric = Some(m);
            final_loss = rows.last().map(|r| r.loss);
            if check_stop(&cfg.termination, &m, epochs_done) {
                trace.record(now, "server", "stop", json!({ "reason": "termination" }));
                end = RunEndKind::Stopped;
                break;
            }
        }
        if let Some(t_max) = rs.cfg.t_max {
            if now > t_max {
                break;
            }
        }
    }
    if end != RunEndKind::Stopped {
        // Hard cap or t_max paths still finish cleanly.
        end = RunEndKind::Stopped;
    }
    if final_metric.is_none() {
        final_metric = primary_metric(&w, &rs.task.test_set, &spec.loss_kind).ok();
        final_loss = evaluate_loss(&w, &rs.task.test_set, &spec.loss_kind).ok().map(|m| m.value);
    }
    Ok(empty_ledger_output(
        Paradigm::FedAvg,
        rows,
        trace,
        store,
        w,
        final_metric,
        final_loss,
        epochs_done,
        gradients,
        end,
        now,
    ))
}

#[derive(Debug, Clone)]
enum AsynEv {
    Arrive { device: u32, tx: SubchainTx },
}

/// Asynchronous baseline: every device loops train-submit-pull on its own
/// clock and the server folds each arrival into the global model as
/// w_gm <- (w_gm + w_lm) / 2, in arrival order, with no validation.
pub fn run_asynfl(rs: &ResolvedScenario) -> Result<RunOutput, EngineError> {
    let cfg = &rs.cfg;
    let spec = &rs.task.spec;
    let factory = RngFactory::new(cfg.seed);
    let mut store = MemoryStore::new();
    let mut trace = Trace::new();
    let mut rows = Vec::new();

    let profiles: BTreeMap<u32, _> =
        rs.profiles.iter().map(|p| (p.device_id, p.clone())).collect();
    let n_devices = profiles.len() as u64;

    let mut w = spec.init_params.clone();
    let mut gradients: u64 = 0;
    let mut arrivals: u64 = 0;
    let mut train_counters: BTreeMap<u32, u64> = BTreeMap::new();
    let mut attack_counters: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cycle_counters: BTreeMap<u32, u32> = BTreeMap::new();
    let mut lat_rngs: BTreeMap<u32, rand_chacha::ChaCha12Rng> = BTreeMap::new();
    let mut final_metric = None;
    let mut final_loss = None;
    let mut end = RunEndKind::TimeLimit;
    let mut q: EventQueue<AsynEv> = EventQueue::new();

    let [lat_lo, lat_hi] = cfg.latency.to_mainchain;
    let t_max = rs.t_max;

    // Kick off the first cycle of every device.
    let device_ids: Vec<u32> = profiles.keys().copied().collect();
    let start_cycle = |d: u32,
                           at: u64,
                           w: &ParamVector,
                           store: &mut MemoryStore,
                           train_counters: &mut BTreeMap<u32, u64>,
                           attack_counters: &mut BTreeMap<u32, u64>,
                           cycle_counters: &mut BTreeMap<u32, u32>,
                           lat_rngs: &mut BTreeMap<u32, rand_chacha::ChaCha12Rng>,
                           q: &mut EventQueue<AsynEv>|
     -> Result<(), EngineError> {
        let tc = {
            let c = train_counters.entry(d).or_insert(0);
            let v = *c;
            *c += 1;
            v
        };
        let ac = {
            let c = attack_counters.entry(d).or_insert(0);
            let v = *c;
            *c += 1;
            v
        };
        let cycle = {
            let c = cycle_counters.entry(d).or_insert(0);
            let v = *c;
            *c += 1;
            v
        };
        let mut train_rng = factory.stream("local_train", d as u64, tc);
        let mut attack_rng = factory.stream("attack", d as u64, ac);
        let update = run_local_update(
            &profiles[&d],
            &rs.behaviors[d as usize],
            w,
            spec,
            &spec.task_id_root,
            cycle,
            at,
            store,
            &mut train_rng,
            &mut attack_rng,
        )
        .map_err(|e| EngineError::Internal(format!("asynfl device {d}: {e}")))?;
        let rng = lat_rngs
            .entry(d)
            .or_insert_with(|| factory.stream("latency", 3, 3000 + d as u64));
        let up = rng.gen_range(lat_lo..=lat_hi);
        let t_arrive = at + update.compute_ticks + up;
        q.schedule(t_arrive, AsynEv::Arrive { device: d, tx: update.tx })
            .map_err(|e| EngineError::Internal(e.to_string()))?;
        Ok(())
    };

    for &d in &device_ids {
        start_cycle(
            d,
            0,
            &w,
            &mut store,
            &mut train_counters,
            &mut attack_counters,
            &mut cycle_counters,
            &mut lat_rngs,
            &mut q,
        )?;
    }

    let mut now = 0;
    while let Some((t, AsynEv::Arrive { device, tx })) = q.pop() {
        now = t;
        if now > t_max {
            break;
        }
        let w_lm = get_params(&store, &tx.params_hash)
            .map_err(|e| EngineError::Internal(e.to_string()))?;
        w = asynfl_update(&w, &w_lm).map_err(|e| EngineError::Internal(e.to_string()))?;
        arrivals += 1;
        gradients += cfg.local_epochs as u64;
        trace.record(now, "server", "merge", json!({
            "device": device,
            "arrivals": arrivals,
            "params_hash": tx.params_hash.to_hex(),
        }));

        let epoch = (arrivals / n_devices) as u32;
        let budget_hit = cfg.gradient_budget.map(|b| gradients >= b).unwrap_or(false);
        let epoch_boundary = arrivals % n_devices == 0;
        if epoch_boundary || budget_hit {
            if let (Ok(metric), Ok(loss)) = (
                primary_metric(&w, &rs.task.test_set, &spec.loss_kind),
                evaluate_loss(&w, &rs.task.test_set, &spec.loss_kind),
            ) {
                rows.push(MetricsRow {
                    paradigm: Paradigm::AsynFl,
                    seed: cfg.seed,
                    global_epoch: epoch,
                    gradients,
                    sim_time: now,
                    metric_kind: metric.kind,
                    metric_value: metric.value,
                    loss: loss.value,
                });
                final_metric = Some(metric);
                final_loss = Some(loss.value);
                if budget_hit {
                    trace.record(now, "server", "stop", json!({ "reason": "gradient_budget" }));
                    end = RunEndKind::Stopped;
                    break;
                }
                let rule_hit = match cfg.termination {
                    TerminationRule::MaxGlobalEpochs { epochs } => epoch >= epochs,
                    _ => check_stop(&cfg.termination, &metric, epoch),
                };
                if rule_hit || epoch >= cfg.epoch_hard_cap {
                    trace.record(now, "server", "stop", json!({ "reason": "termination" }));
                    end = RunEndKind::Stopped;
                    break;
                }
            }
        }
        start_cycle(
            device,
            now,
            &w,
            &mut store,
            &mut train_counters,
            &mut attack_counters,
            &mut cycle_counters,
            &mut lat_rngs,
            &mut q,
        )?;
    }

    if final_metric.is_none() {
        final_metric = primary_metric(&w, &rs.task.test_set, &spec.loss_kind).ok();
        final_loss = evaluate_loss(&w, &rs.task.test_set, &spec.loss_kind).ok().map(|m| m.value);
    }
    let epochs_done = (arrivals / n_devices) as u32;
    Ok(empty_ledger_output(
        Paradigm::AsynFl,
        rows,
        trace,
        store,
        w,
        final_metric,
        final_loss,
        epochs_done,
        gradients,
        end,
        now,
    ))
}

/// Runs whichever paradigm the scenario asks for.
pub fn run_scenario(rs: &ResolvedScenario) -> Result<RunOutput, EngineError> {
    match rs.cfg.paradigm {
        Paradigm::ChainFl => crate::engine::run_chainfl(rs),
        Paradigm::FedAvg => run_fedavg(rs),
        Paradigm::AsynFl => run_asynfl(rs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{resolve, ScenarioConfig, TaskDescriptor};
    use crate::learning::MetricKind;

    fn base_cfg(paradigm: Paradigm) -> ScenarioConfig {
        ScenarioConfig {
            name: "bl".into(),
            seed: 3,
            paradigm,
            shards: 1,
            devices_per_round: 4,
            local_epochs: 2,
            batch_size: 5,
            task: TaskDescriptor { model_dim: 3, samples_per_device: 10, ..Default::default() },
            termination: TerminationRule::MaxGlobalEpochs { epochs: 5 },
            ..Default::default()
        }
    }

    #[test]
    fn fedavg_runs_fixed_epochs_and_learns() {
        let rs = resolve(&base_cfg(Paradigm::FedAvg)).unwrap();
        let out = run_fedavg(&rs).unwrap();
        assert_eq!(out.end, RunEndKind::Stopped);
        assert_eq!(out.epochs, 5);
        assert_eq!(out.rows.len(), 5);
        assert_eq!(out.rows[0].metric_kind, MetricKind::Loss);
        assert!(
            out.rows.last().unwrap().loss < out.rows[0].loss,
            "loss should fall: {} -> {}",
            out.rows[0].loss,
            out.rows.last().unwrap().loss
        );
        // 5 epochs x 4 devices x E=2.
        assert_eq!(out.gradients, 40);
    }

    #[test]
    fn fedavg_is_deterministic() {
        let rs = resolve(&base_cfg(Paradigm::FedAvg)).unwrap();
        let a = run_fedavg(&rs).unwrap();
        let b = run_fedavg(&rs).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(crate::metrics::to_csv(&a.rows), crate::metrics::to_csv(&b.rows));
    }

    #[test]
    fn asynfl_merges_every_arrival_exactly_half_half() {
        let rs = resolve(&base_cfg(Paradigm::AsynFl)).unwrap();
        let out = run_asynfl(&rs).unwrap();
        assert_eq!(out.end, RunEndKind::Stopped);
        assert!(out.epochs >= 5);

        // Replay the merge log: folding arrivals through asynfl_update must
        // land exactly on the final model.
        let mut w = rs.task.spec.init_params.clone();
        for ev in out.trace.of_kind("merge") {
            let hex = ev.detail["params_hash"].as_str().unwrap();
            let hash = crate::store::ContentHash::from_hex(hex).unwrap();
            let w_lm = get_params(&out.store, &hash).unwrap();
            w = asynfl_update(&w, &w_lm).unwrap();
        }
        assert_eq!(w, out.final_params.clone().unwrap(), "merge replay must be bit-exact");
    }

    #[test]
    fn degenerate_chainfl_matches_fedavg_bit_for_bit() {
        // One shard, one round per iteration, one approved tip, validation
        // open: the protocol collapses to FedAvg and the shared rng streams
        // make the model sequences identical, not merely close.
        let mut cfg = base_cfg(Paradigm::ChainFl);
        cfg.shards = 1;
        cfg.rounds_per_iteration = 1;
        cfg.candidate_tips = 2;
        cfg.approved_tips = 1;
        cfg.freshness = crate::config::Freshness::Mode(crate::config::FreshnessMode::Unlimited);
        cfg.quorum_fraction = 1.0;
        cfg.round_timeout = Some(100_000);
        cfg.validation = crate::task::ValidationPolicy::Fixed { value: 1e30 };
        let rs = resolve(&cfg).unwrap();
        let chain = crate::engine::run_chainfl(&rs).unwrap();
        assert_eq!(chain.end, RunEndKind::Stopped);
        assert_eq!(chain.epochs, 5);

        let mut fed_cfg = cfg.clone();
        fed_cfg.paradigm = Paradigm::FedAvg;
        let fed = run_fedavg(&resolve(&fed_cfg).unwrap()).unwrap();

        assert_eq!(
            chain.final_params.as_ref().unwrap().values(),
            fed.final_params.as_ref().unwrap().values(),
            "degenerate ChainFL and FedAvg must produce the same bits"
        );
    }

    #[test]
    fn asynfl_gradient_budget_stops_run() {
        let mut cfg = base_cfg(Paradigm::AsynFl);
        cfg.gradient_budget = Some(20);
        cfg.termination = TerminationRule::MaxGlobalEpochs { epochs: 1000 };
        let rs = resolve(&cfg).unwrap();
        let out = run_asynfl(&rs).unwrap();
        assert_eq!(out.end, RunEndKind::Stopped);
        assert!(out.gradients >= 20 && out.gradients < 20 + 2 * 4,
            "stops promptly at budget, got {}", out.gradients);
    }
}
