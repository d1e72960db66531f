//! Event-driven ChainFL run. One `World` owns all protocol state: M shard
//! runtimes (each a small Raft-style cluster of b nodes coordinating its
//! device slice), the mainchain DAG, the object store and the observer that
//! emits metrics rows. Everything advances through the discrete-event queue,
//! so a run is a pure function of (resolved scenario, seed).

use crate::config::{FaultAction, Paradigm, ResolvedScenario};
use crate::device::{report_status, run_local_update, step_status_walk, Behavior, DeviceProfile};
use crate::learning::{
    evaluate_loss, primary_metric, weighted_aggregate, LossKind, MetricValue, ParamVector,
};
use crate::mainchain::{build_basic_iteration_model, check_stop, DagLedger, MainchainTx};
use crate::metrics::MetricsRow;
use crate::sim::rng::RngFactory;
use crate::sim::trace::Trace;
use crate::sim::{run_until, EventHandler, EventQueue, RunEnd, SimTime};
use crate::store::{get_params, put_params, ContentHash, MemoryStore, ObjectStore};
use crate::subchain::{
    commit_threshold, elect_leader, form_block, genesis_prev_hash, majority, prefix_consistent,
    validate_tx, select_devices, Block, NodeRole, NodeState, SubchainRecord, SubchainTx, TxVerdict,
};
use crate::task::{TerminationRule, ValidationPolicy};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("simulation error: {0}")]
    Sim(#[from] crate::sim::SimError),
    #[error("engine error: {0}")]
    Internal(String),
}

/// Why the run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEndKind {
    /// Termination rule (or a budget/cap) fired and the stop drain finished.
    Stopped,
    /// t_max elapsed first.
    TimeLimit,
    /// The event queue drained without a stop signal (everything stalled).
    Starved,
}

#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub trace: Trace,
    pub dag_export: String,
    pub final_params: Option<ParamVector>,
    pub final_metric: Option<MetricValue>,
    pub final_loss: Option<f64>,
    pub epochs: u32,
    pub gradients: u64,
    pub notes: Vec<String>,
    pub end: RunEndKind,
    pub end_time: SimTime,
    pub ledger: DagLedger,
    pub store: MemoryStore,
    /// Final committed logs, indexed [shard][node], for consistency checks.
    pub shard_logs: Vec<Vec<Vec<Block>>>,
}

/// In-flight uncommitted block on the leader.
#[derive(Debug, Clone)]
struct Inflight {
    block: Block,
    acks: BTreeSet<u32>,
    formed_at: SimTime,
}

#[derive(Debug, Clone)]
struct RoundCtx {
    round_key: u64,
    round_no: u32,
    selected: Vec<u32>,
    /// device id -> (model, |D_j|); insertion keyed by id so aggregation
    /// order is stable.
    arrived: BTreeMap<u32, (ParamVector, u64)>,
}

#[derive(Debug, Clone)]
enum Phase {
    Idle,
    AwaitTips,
    Selecting,
    Round(RoundCtx),
    Stalled,
    Done,
}

struct ShardRuntime {
    nodes: Vec<NodeState>,
    leader: u32,
    term: u64,
    phase: Phase,
    /// Shard-local iteration index; 0 means the cold-start iteration.
    iteration_seq: u64,
    round_no: u32,
    w_bim: Option<ParamVector>,
    w_brm: Option<ParamVector>,
    approve_set: Vec<ContentHash>,
    bim_hash: Option<ContentHash>,
    /// Monotone id for round attempts; stale messages carry old values.
    attempt_gen: u64,
    retries: u32,
    select_counter: u64,
    tips_counter: u64,
    record_queue: Vec<SubchainRecord>,
    inflight: Option<Inflight>,
    /// Heartbeat-check chain generation per node; bumped on crash/recover.
    node_gen: Vec<u64>,
    /// Per-node validation context: (round_key, a_tau_score).
    follower_ctx: Vec<Option<(u64, f64)>>,
    stopped: bool,
}

impl ShardRuntime {
    fn new(b: u32) -> Self {
        let mut nodes: Vec<NodeState> = (0..b).map(NodeState::new).collect();
        // Node 0 boots as leader; without this every shard would hold a
        // pointless election before its first iteration.
        nodes[0].role = NodeRole::Leader;
        Self {
            nodes,
            leader: 0,
            term: 0,
            phase: Phase::Idle,
            iteration_seq: 0,
            round_no: 0,
            w_bim: None,
            w_brm: None,
            approve_set: Vec::new(),
            bim_hash: None,
            attempt_gen: 0,
            retries: 0,
            select_counter: 0,
            tips_counter: 0,
            record_queue: Vec::new(),
            inflight: None,
            node_gen: vec![0; b as usize],
            follower_ctx: vec![None; b as usize],
            stopped: false,
        }
    }

    fn leader_live(&self) -> bool {
        self.nodes[self.leader as usize].live
            && self.nodes[self.leader as usize].role == NodeRole::Leader
    }
}

#[derive(Debug, Clone)]
pub enum Ev {
    IterationKick { shard: usize },
    TipsRequestArrive { shard: usize },
    TipsResponse { shard: usize, tips: Vec<MainchainTx> },
    SelectRetry { shard: usize, gen: u64 },
    RoundCtxMsg { shard: usize, node: u32, round_key: u64, a_tau_score: f64 },
    DeviceFinish { shard: usize, round_key: u64, device: u32, node: u32, tx: SubchainTx },
    TxAtNode { shard: usize, node: u32, round_key: u64, device: u32, tx: SubchainTx },
    LeaderTx { shard: usize, round_key: u64, device: u32, tx: SubchainTx, score: f64 },
    RoundTimeout { shard: usize, round_key: u64 },
    BlockTick { shard: usize },
    AppendBlock { shard: usize, node: u32, block: Block },
    AckBlock { shard: usize, from: u32, block_no: u64, hash: ContentHash },
    CommitBlock { shard: usize, node: u32, block: Block },
    HeartbeatSend { shard: usize, term: u64 },
    HeartbeatArrive { shard: usize, node: u32, term: u64, leader: u32, committed: u64 },
    HeartbeatCheck { shard: usize, node: u32, gen: u64 },
    LogSyncReq { shard: usize, from: u32, have: u64 },
    LogSyncResp { shard: usize, node: u32, blocks: Vec<Block> },
    SubmitMainTx { tx: MainchainTx },
    TipDeadline,
    EvalTick,
    StopAtShard { shard: usize },
    PlantTx { index: usize },
    Fault { shard: usize, node: u32, action: FaultAction },
}

pub struct World {
    rs: ResolvedScenario,
    factory: RngFactory,
    store: MemoryStore,
    ledger: DagLedger,
    task_id: String,
    shards: Vec<ShardRuntime>,
    profiles: BTreeMap<u32, DeviceProfile>,
    behaviors: BTreeMap<u32, Behavior>,
    train_counters: BTreeMap<u32, u64>,
    attack_counters: BTreeMap<u32, u64>,
    walk_counters: BTreeMap<u32, u64>,
    lat_rngs: BTreeMap<(u8, u64), ChaCha12Rng>,
    main_link_clock: Vec<SimTime>,
    gradients: u64,
    shard_txs: u64,
    rows: Vec<MetricsRow>,
    trace: Trace,
    stopping: bool,
    notes: Vec<String>,
    final_params: Option<ParamVector>,
    final_metric: Option<MetricValue>,
    final_loss: Option<f64>,
}

impl World {
    pub fn new(rs: ResolvedScenario) -> Result<Self, EngineError> {
        let factory = RngFactory::new(rs.cfg.seed);
        let mut store = MemoryStore::new();
        let mut ledger = DagLedger::new(rs.freshness_ticks);

        let init_hash = put_params(&mut store, &rs.task.spec.init_params)
            .map_err(|e| EngineError::Internal(format!("init params: {e}")))?;
        // Make the test-set reference resolvable from the store.
        let mut test_blob = Vec::new();
        crate::task::export_dataset(&rs.task.test_set, &mut test_blob)
            .map_err(|e| EngineError::Internal(format!("test set: {e}")))?;
        store.put(&test_blob).map_err(|e| EngineError::Internal(format!("test set: {e}")))?;

        let doc = serde_json::to_vec(&rs.task.spec)
            .map_err(|e| EngineError::Internal(format!("genesis doc: {e}")))?;
        let task_id = rs.task.spec.task_id_root.clone();
        ledger
            .create_genesis(&doc, &task_id, init_hash, 0)
            .map_err(|e| EngineError::Internal(format!("genesis: {e}")))?;

        let n_shards = rs.cfg.shards;
        let shards = (0..n_shards)
            .map(|_| ShardRuntime::new(rs.cfg.nodes_per_shard))
            .collect();
        let profiles: BTreeMap<u32, DeviceProfile> =
            rs.profiles.iter().map(|p| (p.device_id, p.clone())).collect();
        let behaviors: BTreeMap<u32, Behavior> = rs
            .profiles
            .iter()
            .map(|p| (p.device_id, rs.behaviors[p.device_id as usize]))
            .collect();

        let mut w = Self {
            rs,
            factory,
            store,
            ledger,
            task_id,
            shards,
            profiles,
            behaviors,
            train_counters: BTreeMap::new(),
            attack_counters: BTreeMap::new(),
            walk_counters: BTreeMap::new(),
            lat_rngs: BTreeMap::new(),
            main_link_clock: vec![0; n_shards],
            gradients: 0,
            shard_txs: 0,
            rows: Vec::new(),
            trace: Trace::new(),
            stopping: false,
            notes: Vec::new(),
            final_params: None,
            final_metric: None,
            final_loss: None,
        };
        w.trace.record(0, "mainchain", "genesis", json!({
            "tx_id": w.ledger.genesis_id().unwrap().to_hex(),
            "task_id": w.task_id,
        }));
        Ok(w)
    }

    pub fn schedule_initial(&self, q: &mut EventQueue<Ev>) {
        let cfg = &self.rs.cfg;
        for s in 0..cfg.shards {
            q.schedule(0, Ev::IterationKick { shard: s }).unwrap();
            q.schedule(cfg.heartbeat_interval, Ev::HeartbeatSend { shard: s, term: 0 }).unwrap();
            q.schedule(cfg.block_period, Ev::BlockTick { shard: s }).unwrap();
            for n in 0..cfg.nodes_per_shard {
                q.schedule(cfg.heartbeat_interval, Ev::HeartbeatCheck { shard: s, node: n, gen: 0 })
                    .unwrap();
            }
        }
        q.schedule(self.rs.eval_period, Ev::EvalTick).unwrap();
        for (i, f) in cfg.faults.iter().enumerate() {
            let _ = i;
            q.schedule(f.at, Ev::Fault { shard: f.shard, node: f.node, action: f.action }).unwrap();
        }
        for (i, p) in cfg.planted_txs.iter().enumerate() {
            q.schedule(p.at, Ev::PlantTx { index: i }).unwrap();
        }
    }

    fn lat_intra(&mut self, shard: usize) -> u64 {
        let [lo, hi] = self.rs.cfg.latency.intra;
        let rng = self
            .lat_rngs
            .entry((1, shard as u64))
            .or_insert_with(|| self.factory.stream("latency", 1, shard as u64));
        rng.gen_range(lo..=hi)
    }

    fn lat_main(&mut self, shard: usize) -> u64 {
        let [lo, hi] = self.rs.cfg.latency.to_mainchain;
        let rng = self
            .lat_rngs
            .entry((2, shard as u64))
            .or_insert_with(|| self.factory.stream("latency", 2, shard as u64));
        rng.gen_range(lo..=hi)
    }

    // The shard-to-mainchain link preserves send order: a tips request sent
    // right after a model submission must not overtake it.
    fn send_to_main(&mut self, shard: usize, ev: Ev, q: &mut EventQueue<Ev>, now: SimTime) {
        let lat = self.lat_main(shard);
        let at = (now + lat).max(self.main_link_clock[shard]);
        self.main_link_clock[shard] = at;
        q.schedule(at, ev).unwrap();
    }

    fn loss_kind(&self) -> LossKind {
        self.rs.task.spec.loss_kind
    }

    fn current_epoch(&self) -> u32 {
        (self.shard_txs / self.rs.cfg.shards as u64) as u32
    }

    // ---- iteration lifecycle (leader side) ----

    fn begin_iteration(&mut self, shard: usize, q: &mut EventQueue<Ev>, now: SimTime) {
        if self.shards[shard].stopped {
            self.shards[shard].phase = Phase::Done;
            return;
        }
        self.shards[shard].phase = Phase::AwaitTips;
        self.trace.record(now, format!("shard-{shard}"), "tips_request", json!({
            "iteration": self.shards[shard].iteration_seq,
        }));
        self.send_to_main(shard, Ev::TipsRequestArrive { shard }, q, now);
    }

    fn handle_tips_request(&mut self, shard: usize, q: &mut EventQueue<Ev>, now: SimTime) {
        let counter = self.shards[shard].tips_counter;
        self.shards[shard].tips_counter += 1;
        let mut rng = self.factory.stream("tips", shard as u64, counter);
        let eta = self.rs.cfg.candidate_tips as usize;
        match self.ledger.request_tips(eta, now, &mut rng) {
            Ok(tips) => {
                let lat = self.lat_main(shard);
                q.schedule(now + lat, Ev::TipsResponse { shard, tips }).unwrap();
            }
            Err(e) => {
                self.trace.record(now, "mainchain", "tips_error", json!({ "error": e.to_string() }));
            }
        }
    }

    fn handle_tips_response(
        &mut self,
        shard: usize,
        tips: Vec<MainchainTx>,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        if !self.shards[shard].leader_live() || !matches!(self.shards[shard].phase, Phase::AwaitTips)
        {
            return;
        }
        let lambda = self.rs.cfg.approved_tips as usize;
        let built = build_basic_iteration_model(
            &tips,
            lambda,
            &self.rs.task.test_set,
            &self.loss_kind(),
            &self.store,
        );
        let built = match built {
            Ok(b) => b,
            Err(e) => {
                // No evaluable tip; ask again shortly.
                self.trace.record(now, format!("shard-{shard}"), "tips_unusable", json!({
                    "error": e.to_string(),
                }));
                let delay = self.rs.cfg.selection_retry_delay;
                q.schedule(now + delay, Ev::TipsRequestArrive { shard }).unwrap();
                return;
            }
        };
        for ev in built.evals.iter().filter(|e| e.score.is_none()) {
            self.trace.record(now, format!("shard-{shard}"), "tip_skipped", json!({
                "tx_id": ev.tx_id.to_hex(),
            }));
        }
        let bim_hash = put_params(&mut self.store, &built.params).expect("store bim");
        {
            let s = &mut self.shards[shard];
            s.w_bim = Some(built.params.clone());
            s.w_brm = Some(built.params);
            s.approve_set = built.approve_ids.clone();
            s.bim_hash = Some(bim_hash);
            s.round_no = 0;
            s.record_queue.push(SubchainRecord::IterationStart {
                task_id: self.task_id.clone(),
                bim_hash,
                approve_set: built.approve_ids.clone(),
                timestamp: now,
            });
        }
        self.trace.record(now, format!("shard-{shard}"), "iteration_start", json!({
            "iteration": self.shards[shard].iteration_seq,
            "bim_hash": bim_hash.to_hex(),
            "approve_set": built.approve_ids.iter().map(|a| a.to_hex()).collect::<Vec<_>>(),
        }));
        self.start_round_attempt(shard, q, now);
    }

    fn a_tau_score(&self, shard: usize) -> f64 {
        let s = &self.shards[shard];
        match self.rs.task.spec.a_tau_policy {
            ValidationPolicy::Fixed { value } => match self.loss_kind() {
                LossKind::SquaredError => -value,
                LossKind::CrossEntropy { .. } => value,
            },
            ValidationPolicy::BasicRoundModelMetric => {
                // Cold start: the very first round of a shard's first
                // iteration admits every model.
                if s.iteration_seq == 0 && s.round_no == 0 {
                    return f64::NEG_INFINITY;
                }
                let w = s.w_brm.as_ref().expect("round has a basic model");
                primary_metric(w, &self.rs.task.test_set, &self.loss_kind())
                    .map(|m| m.score())
                    .unwrap_or(f64::NEG_INFINITY)
            }
        }
    }

    fn start_round_attempt(&mut self, shard: usize, q: &mut EventQueue<Ev>, now: SimTime) {
        if self.shards[shard].stopped {
            self.shards[shard].phase = Phase::Done;
            return;
        }
        self.shards[shard].attempt_gen += 1;
        self.shards[shard].phase = Phase::Selecting;
        self.attempt_selection(shard, q, now);
    }

    fn attempt_selection(&mut self, shard: usize, q: &mut EventQueue<Ev>, now: SimTime) {
        let cfg = &self.rs.cfg;
        let walk_step = cfg.status_walk_step;
        let ids = self.rs.shard_device_ids(shard);
        let mut reports = Vec::with_capacity(ids.len());
        for d in ids {
            if walk_step > 0.0 {
                let counter = self.walk_counters.entry(d).or_insert(0);
                let mut rng = self.factory.stream("walk", d as u64, *counter);
                *counter += 1;
                let floor = 0.0;
                step_status_walk(self.profiles.get_mut(&d).unwrap(), walk_step, floor, &mut rng);
            }
            reports.push(report_status(&self.profiles[&d], now));
        }
        let counter = self.shards[shard].select_counter;
        self.shards[shard].select_counter += 1;
        let mut rng = self.factory.stream("device_select", shard as u64, counter);
        let picked = select_devices(
            &reports,
            self.rs.cfg.devices_per_round,
            self.rs.cfg.battery_min,
            self.rs.cfg.network_min,
            &mut rng,
        );
        let Some(selected) = picked else {
            let gen = self.shards[shard].attempt_gen;
            self.trace.record(now, format!("shard-{shard}"), "selection_postponed", json!({
                "round": self.shards[shard].round_no,
            }));
            q.schedule(now + self.rs.cfg.selection_retry_delay, Ev::SelectRetry { shard, gen })
                .unwrap();
            return;
        };

        let a_tau_score = self.a_tau_score(shard);
        let round_no = self.shards[shard].round_no;
        let gen = self.shards[shard].attempt_gen;
        self.trace.record(now, format!("shard-{shard}"), "round_start", json!({
            "iteration": self.shards[shard].iteration_seq,
            "round": round_no,
            "attempt": gen,
            "a_tau_score": if a_tau_score == f64::NEG_INFINITY { json!("open") } else { json!(a_tau_score) },
            "selected": selected,
        }));

        // Share the validation context with every node, the leader included.
        let leader = self.shards[shard].leader;
        self.shards[shard].follower_ctx[leader as usize] = Some((gen, a_tau_score));
        for n in 0..self.rs.cfg.nodes_per_shard {
            if n != leader {
                let lat = self.lat_intra(shard);
                q.schedule(now + lat, Ev::RoundCtxMsg { shard, node: n, round_key: gen, a_tau_score })
                    .unwrap();
            }
        }

        let w_brm = self.shards[shard].w_brm.clone().expect("round has a basic model");
        let b = self.rs.cfg.nodes_per_shard;
        for &d in &selected {
            let lat_req = self.lat_intra(shard);
            let t_start = now + lat_req;
            let train_counter = self.train_counters.entry(d).or_insert(0);
            let tc = *train_counter;
            *train_counter += 1;
            let attack_counter = self.attack_counters.entry(d).or_insert(0);
            let ac = *attack_counter;
            *attack_counter += 1;
            let mut train_rng = self.factory.stream("local_train", d as u64, tc);
            let mut attack_rng = self.factory.stream("attack", d as u64, ac);
            let update = run_local_update(
                &self.profiles[&d],
                &self.behaviors[&d],
                &w_brm,
                &self.rs.task.spec,
                &self.task_id,
                round_no,
                t_start,
                &mut self.store,
                &mut train_rng,
                &mut attack_rng,
            )
            .expect("local update");
            let node = d % b;
            q.schedule(
                t_start + update.compute_ticks,
                Ev::DeviceFinish { shard, round_key: gen, device: d, node, tx: update.tx },
            )
            .unwrap();
        }

        self.shards[shard].phase = Phase::Round(RoundCtx {
            round_key: gen,
            round_no,
            selected,
            arrived: BTreeMap::new(),
        });
        q.schedule(now + self.rs.round_timeout, Ev::RoundTimeout { shard, round_key: gen })
            .unwrap();
    }

    fn handle_device_finish(
        &mut self,
        shard: usize,
        round_key: u64,
        device: u32,
        node: u32,
        tx: SubchainTx,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        self.gradients += self.rs.cfg.local_epochs as u64;
        self.trace.record(now, format!("dev-{device:04}"), "device_finish", json!({
            "gradients": self.gradients,
            "round_key": round_key,
        }));
        if let Some(budget) = self.rs.cfg.gradient_budget {
            if self.gradients >= budget && !self.stopping {
                self.initiate_stop("gradient_budget", q, now);
            }
        }
        let lat = self.lat_intra(shard);
        q.schedule(now + lat, Ev::TxAtNode { shard, node, round_key, device, tx }).unwrap();
    }

    fn handle_tx_at_node(
        &mut self,
        shard: usize,
        node: u32,
        round_key: u64,
        device: u32,
        tx: SubchainTx,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        if !self.shards[shard].nodes[node as usize].live {
            return;
        }
        let ctx = self.shards[shard].follower_ctx[node as usize];
        let Some((key, a_tau_score)) = ctx else { return };
        if key != round_key {
            self.trace.record(now, format!("shard-{shard}"), "tx_stale", json!({
                "device": device, "round_key": round_key,
            }));
            return;
        }
        match validate_tx(&tx, &self.rs.task.test_set, &self.loss_kind(), a_tau_score, &self.store)
        {
            TxVerdict::Valid { score } => {
                self.trace.record(now, format!("shard-{shard}"), "tx_valid", json!({
                    "device": device, "node": node, "score": score,
                }));
                let leader = self.shards[shard].leader;
                let lat = if node == leader { 0 } else { self.lat_intra(shard) };
                q.schedule(now + lat, Ev::LeaderTx { shard, round_key, device, tx, score })
                    .unwrap();
            }
            TxVerdict::Invalid(reason) => {
                self.trace.record(now, format!("shard-{shard}"), "tx_invalid", json!({
                    "device": device, "node": node, "reason": reason.label(),
                }));
            }
        }
    }

    fn handle_leader_tx(
        &mut self,
        shard: usize,
        round_key: u64,
        device: u32,
        tx: SubchainTx,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        if !self.shards[shard].leader_live() {
            return;
        }
        let params = match get_params(&self.store, &tx.params_hash) {
            Ok(p) => p,
            Err(_) => return,
        };
        let weight = self.profiles[&device].dataset.len() as u64;
        let complete = {
            let s = &mut self.shards[shard];
            let Phase::Round(ctx) = &mut s.phase else { return };
            if ctx.round_key != round_key || ctx.arrived.contains_key(&device) {
                return;
            }
            ctx.arrived.insert(device, (params, weight));
            s.record_queue.push(SubchainRecord::Device(tx));
            let ctx = match &s.phase {
                Phase::Round(c) => c,
                _ => unreachable!(),
            };
            ctx.arrived.len() == ctx.selected.len()
        };
        if complete {
            self.aggregate_round(shard, q, now);
        }
    }

    fn handle_round_timeout(
        &mut self,
        shard: usize,
        round_key: u64,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        if !self.shards[shard].leader_live() {
            return;
        }
        let (arrived, selected, round_no) = match &self.shards[shard].phase {
            Phase::Round(ctx) if ctx.round_key == round_key => {
                (ctx.arrived.len(), ctx.selected.len(), ctx.round_no)
            }
            _ => return,
        };
        let needed =
            ((self.rs.cfg.quorum_fraction * selected as f64).ceil() as usize).clamp(1, selected);
        if arrived >= needed {
            self.aggregate_round(shard, q, now);
            return;
        }
        self.trace.record(now, format!("shard-{shard}"), "round_abandoned", json!({
            "round": round_no, "arrived": arrived, "needed": needed,
        }));
        let s = &mut self.shards[shard];
        s.retries += 1;
        if s.retries > self.rs.cfg.max_round_retries {
            s.phase = Phase::Stalled;
            let note = format!(
                "shard {shard} stalled in round {round_no} after {} abandoned attempts",
                s.retries
            );
            self.trace.record(now, format!("shard-{shard}"), "shard_stalled", json!({
                "round": round_no,
            }));
            self.notes.push(note);
            return;
        }
        self.start_round_attempt(shard, q, now);
    }

    fn aggregate_round(&mut self, shard: usize, q: &mut EventQueue<Ev>, now: SimTime) {
        let ctx = match std::mem::replace(&mut self.shards[shard].phase, Phase::Idle) {
            Phase::Round(ctx) => ctx,
            other => {
                self.shards[shard].phase = other;
                return;
            }
        };
        let inputs: Vec<(ParamVector, u64)> = ctx.arrived.into_values().collect();
        let count = inputs.len();
        let w_s = weighted_aggregate(&inputs).expect("aggregate validated models");
        let ws_hash = put_params(&mut self.store, &w_s).expect("store round model");
        self.trace.record(now, format!("shard-{shard}"), "round_aggregated", json!({
            "iteration": self.shards[shard].iteration_seq,
            "round": ctx.round_no,
            "models": count,
            "params_hash": ws_hash.to_hex(),
        }));

        let r_total = self.rs.cfg.rounds_per_iteration;
        {
            let s = &mut self.shards[shard];
            s.retries = 0;
            s.w_brm = Some(w_s.clone());
            s.round_no = ctx.round_no + 1;
            // Log the model this round produced: rounds r < R publish it as
            // the next basic round model; round R-1 marks iteration
            // completion (round_no == R) for crash recovery.
            s.record_queue.push(SubchainRecord::RoundModel {
                task_id: self.task_id.clone(),
                round_no: ctx.round_no + 1,
                params_hash: ws_hash,
                timestamp: now,
            });
        }

        if self.shards[shard].round_no < r_total {
            self.start_round_attempt(shard, q, now);
            return;
        }

        // Iteration complete: package the shard model as a mainchain tx.
        let sender = format!("shard-{shard}");
        let approves = self.shards[shard].approve_set.clone();
        let tx = MainchainTx::new(sender, self.task_id.clone(), ws_hash, approves, now);
        self.trace.record(now, format!("shard-{shard}"), "shard_model_submitted", json!({
            "iteration": self.shards[shard].iteration_seq,
            "tx_id": tx.tx_id.to_hex(),
        }));
        self.send_to_main(shard, Ev::SubmitMainTx { tx }, q, now);

        let s = &mut self.shards[shard];
        s.iteration_seq += 1;
        s.round_no = 0;
        s.w_bim = None;
        s.approve_set.clear();
        s.bim_hash = None;
        if s.stopped {
            s.phase = Phase::Done;
        } else {
            self.begin_iteration(shard, q, now);
        }
    }

    // ---- subchain block pipeline ----

    fn handle_block_tick(&mut self, shard: usize, q: &mut EventQueue<Ev>, now: SimTime) {
        let period = self.rs.cfg.block_period;
        let b = self.rs.cfg.nodes_per_shard;
        if self.shards[shard].leader_live() {
            // Give up on a block that cannot gather its quorum and retry.
            let expired = match &self.shards[shard].inflight {
                Some(inf) => now.saturating_sub(inf.formed_at) > 4 * period,
                None => false,
            };
            if expired {
                let inf = self.shards[shard].inflight.take().unwrap();
                self.trace.record(now, format!("shard-{shard}"), "block_failed", json!({
                    "block_no": inf.block.block_no,
                }));
                let mut records = inf.block.records;
                records.extend(self.shards[shard].record_queue.drain(..));
                self.shards[shard].record_queue = records;
            }
            if self.shards[shard].inflight.is_none()
                && !self.shards[shard].record_queue.is_empty()
            {
                let leader = self.shards[shard].leader;
                let term = self.shards[shard].term;
                let s = &mut self.shards[shard];
                let prev = s.nodes[leader as usize].log.last().cloned();
                if let Some(block) =
                    form_block(&mut s.record_queue, prev.as_ref(), leader, term)
                {
                    s.inflight = Some(Inflight {
                        block: block.clone(),
                        acks: BTreeSet::new(),
                        formed_at: now,
                    });
                    for n in 0..b {
                        if n != leader {
                            let lat = self.lat_intra(shard);
                            q.schedule(now + lat, Ev::AppendBlock { shard, node: n, block: block.clone() })
                                .unwrap();
                        }
                    }
                }
            }
        }
        let quiescent = self.stopping
            && self.shards[shard].record_queue.is_empty()
            && self.shards[shard].inflight.is_none();
        if !quiescent {
            q.schedule(now + period, Ev::BlockTick { shard }).unwrap();
        }
    }

    fn handle_append_block(
        &mut self,
        shard: usize,
        node: u32,
        block: Block,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        let st = &self.shards[shard].nodes[node as usize];
        if !st.live {
            return;
        }
        let expected_prev = st.log.last().map(|b| b.hash()).unwrap_or_else(genesis_prev_hash);
        let signatures_ok = block.records.iter().all(|r| match r {
            SubchainRecord::Device(tx) => !tx.signature.is_empty(),
            _ => true,
        });
        if block.block_no == st.log.len() as u64 && block.prev_hash == expected_prev && signatures_ok
        {
            let lat = self.lat_intra(shard);
            q.schedule(
                now + lat,
                Ev::AckBlock { shard, from: node, block_no: block.block_no, hash: block.hash() },
            )
            .unwrap();
        } else if (block.block_no as usize) > st.log.len() {
            let have = st.log.len() as u64;
            let lat = self.lat_intra(shard);
            q.schedule(now + lat, Ev::LogSyncReq { shard, from: node, have }).unwrap();
        }
    }

    fn handle_ack_block(
        &mut self,
        shard: usize,
        from: u32,
        block_no: u64,
        hash: ContentHash,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        if !self.shards[shard].leader_live() {
            return;
        }
        let b = self.rs.cfg.nodes_per_shard;
        let committed = {
            let s = &mut self.shards[shard];
            let Some(inf) = &mut s.inflight else { return };
            if inf.block.block_no != block_no || inf.block.hash() != hash {
                return;
            }
            inf.acks.insert(from);
            inf.acks.len() as u32 >= commit_threshold(b)
        };
        if committed {
            let inf = self.shards[shard].inflight.take().unwrap();
            let leader = self.shards[shard].leader;
            self.shards[shard].nodes[leader as usize].log.push(inf.block.clone());
            self.trace.record(now, format!("shard-{shard}"), "block_committed", json!({
                "block_no": inf.block.block_no,
                "records": inf.block.records.len(),
                "hash": inf.block.hash().to_hex(),
            }));
            for n in 0..b {
                if n != leader {
                    let lat = self.lat_intra(shard);
                    q.schedule(now + lat, Ev::CommitBlock { shard, node: n, block: inf.block.clone() })
                        .unwrap();
                }
            }
        }
    }

    fn handle_commit_block(
        &mut self,
        shard: usize,
        node: u32,
        block: Block,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        let st = &mut self.shards[shard].nodes[node as usize];
        if !st.live {
            return;
        }
        let expected_prev = st.log.last().map(|b| b.hash()).unwrap_or_else(genesis_prev_hash);
        if block.block_no == st.log.len() as u64 && block.prev_hash == expected_prev {
            st.log.push(block);
        } else if (block.block_no as usize) > st.log.len() {
            let have = st.log.len() as u64;
            let lat = self.lat_intra(shard);
            q.schedule(now + lat, Ev::LogSyncReq { shard, from: node, have }).unwrap();
        }
        debug_assert!(prefix_consistent(&self.shards[shard].nodes), "shard {shard} logs diverged");
    }

    fn handle_log_sync_req(
        &mut self,
        shard: usize,
        from: u32,
        have: u64,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        if !self.shards[shard].leader_live() {
            return;
        }
        let leader = self.shards[shard].leader;
        let log = &self.shards[shard].nodes[leader as usize].log;
        if (have as usize) < log.len() {
            let blocks = log[have as usize..].to_vec();
            let lat = self.lat_intra(shard);
            q.schedule(now + lat, Ev::LogSyncResp { shard, node: from, blocks }).unwrap();
        }
    }

    fn handle_log_sync_resp(&mut self, shard: usize, node: u32, blocks: Vec<Block>, now: SimTime) {
        let st = &mut self.shards[shard].nodes[node as usize];
        if !st.live {
            return;
        }
        for block in blocks {
            let expected_prev = st.log.last().map(|b| b.hash()).unwrap_or_else(genesis_prev_hash);
            if block.block_no == st.log.len() as u64 && block.prev_hash == expected_prev {
                st.log.push(block);
            }
        }
        self.trace.record(now, format!("shard-{shard}"), "log_synced", json!({
            "node": node,
            "len": self.shards[shard].nodes[node as usize].log.len(),
        }));
    }

    // ---- heartbeats, elections, faults ----

    fn handle_heartbeat_send(&mut self, shard: usize, term: u64, q: &mut EventQueue<Ev>, now: SimTime) {
        let s = &self.shards[shard];
        if s.term != term || !s.leader_live() {
            return;
        }
        let leader = s.leader;
        let committed = s.nodes[leader as usize].log.len() as u64;
        for n in 0..self.rs.cfg.nodes_per_shard {
            if n != leader {
                let lat = self.lat_intra(shard);
                q.schedule(
                    now + lat,
                    Ev::HeartbeatArrive { shard, node: n, term, leader, committed },
                )
                .unwrap();
            }
        }
        if !self.stopping {
            q.schedule(now + self.rs.cfg.heartbeat_interval, Ev::HeartbeatSend { shard, term })
                .unwrap();
        }
    }

    fn handle_heartbeat_arrive(
        &mut self,
        shard: usize,
        node: u32,
        term: u64,
        _leader: u32,
        committed: u64,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        let st = &mut self.shards[shard].nodes[node as usize];
        if !st.live || term < st.term {
            return;
        }
        st.term = term;
        st.role = NodeRole::Follower;
        st.last_heartbeat = now;
        if committed > st.log.len() as u64 {
            let have = st.log.len() as u64;
            let lat = self.lat_intra(shard);
            q.schedule(now + lat, Ev::LogSyncReq { shard, from: node, have }).unwrap();
        }
    }

    fn handle_heartbeat_check(
        &mut self,
        shard: usize,
        node: u32,
        gen: u64,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        if self.shards[shard].node_gen[node as usize] != gen
            || !self.shards[shard].nodes[node as usize].live
        {
            return;
        }
        if !self.stopping {
            q.schedule(now + self.rs.cfg.heartbeat_interval, Ev::HeartbeatCheck { shard, node, gen })
                .unwrap();
        }
        let st = &self.shards[shard].nodes[node as usize];
        let silent = now.saturating_sub(st.last_heartbeat) > self.rs.cfg.heartbeat_timeout;
        if st.role == NodeRole::Follower && silent && !self.shards[shard].leader_live() {
            self.run_election(shard, q, now);
        }
    }

    fn run_election(&mut self, shard: usize, q: &mut EventQueue<Ev>, now: SimTime) {
        let b = self.rs.cfg.nodes_per_shard;
        let live = self.shards[shard].nodes.iter().filter(|n| n.live).count() as u32;
        if live < majority(b) {
            self.trace.record(now, format!("shard-{shard}"), "election_no_quorum", json!({
                "live": live,
            }));
            return;
        }
        let Some(new_leader) = elect_leader(&self.shards[shard].nodes) else { return };
        let new_term = self.shards[shard].term + 1;
        {
            let s = &mut self.shards[shard];
            s.term = new_term;
            s.leader = new_leader;
            for n in s.nodes.iter_mut().filter(|n| n.live) {
                n.term = new_term;
                n.role = NodeRole::Follower;
                n.last_heartbeat = now;
            }
            s.nodes[new_leader as usize].role = NodeRole::Leader;
            s.record_queue.clear();
            s.inflight = None;
            s.retries = 0;
            s.follower_ctx = vec![None; b as usize];
        }
        self.trace.record(now, format!("shard-{shard}"), "election", json!({
            "leader": new_leader,
            "term": new_term,
        }));
        q.schedule(now, Ev::HeartbeatSend { shard, term: new_term }).unwrap();
        self.resume_from_log(shard, q, now);
    }

    /// A newly elected leader rebuilds its iteration state from the
    /// committed records and restarts the interrupted round. Uncommitted
    /// work is redone; committed state is never contradicted.
    fn resume_from_log(&mut self, shard: usize, q: &mut EventQueue<Ev>, now: SimTime) {
        if self.shards[shard].stopped {
            self.shards[shard].phase = Phase::Done;
            return;
        }
        let leader = self.shards[shard].leader;
        let log = self.shards[shard].nodes[leader as usize].log.clone();
        let records: Vec<&SubchainRecord> = log.iter().flat_map(|b| b.records.iter()).collect();
        let iter_count =
            records.iter().filter(|r| matches!(r, SubchainRecord::IterationStart { .. })).count()
                as u64;
        let last_start = records
            .iter()
            .rposition(|r| matches!(r, SubchainRecord::IterationStart { .. }));

        let Some(start_idx) = last_start else {
            self.shards[shard].iteration_seq = 0;
            self.begin_iteration(shard, q, now);
            return;
        };
        let (bim_hash, approve_set) = match records[start_idx] {
            SubchainRecord::IterationStart { bim_hash, approve_set, .. } => {
                (*bim_hash, approve_set.clone())
            }
            _ => unreachable!(),
        };
        let last_round = records[start_idx..]
            .iter()
            .filter_map(|r| match r {
                SubchainRecord::RoundModel { round_no, params_hash, .. } => {
                    Some((*round_no, *params_hash))
                }
                _ => None,
            })
            .next_back();

        let r_total = self.rs.cfg.rounds_per_iteration;
        if let Some((round_no, _)) = last_round {
            if round_no >= r_total {
                // The recorded iteration finished and its shard model was
                // submitted; move on to a fresh iteration.
                self.shards[shard].iteration_seq = iter_count;
                self.begin_iteration(shard, q, now);
                return;
            }
        }
        let (round_no, brm_hash) = match last_round {
            Some((round_no, params_hash)) => (round_no, params_hash),
            None => (0, bim_hash),
        };
        let w_brm = match get_params(&self.store, &brm_hash) {
            Ok(p) => p,
            Err(_) => {
                self.shards[shard].iteration_seq = iter_count.saturating_sub(1);
                self.begin_iteration(shard, q, now);
                return;
            }
        };
        {
            let s = &mut self.shards[shard];
            s.iteration_seq = iter_count - 1;
            s.round_no = round_no;
            s.w_bim = get_params(&self.store, &bim_hash).ok();
            s.w_brm = Some(w_brm);
            s.approve_set = approve_set;
            s.bim_hash = Some(bim_hash);
        }
        self.trace.record(now, format!("shard-{shard}"), "resume", json!({
            "iteration": self.shards[shard].iteration_seq,
            "round": round_no,
        }));
        self.start_round_attempt(shard, q, now);
    }

    fn handle_fault(
        &mut self,
        shard: usize,
        node: u32,
        action: FaultAction,
        q: &mut EventQueue<Ev>,
        now: SimTime,
    ) {
        match action {
            FaultAction::Crash => {
                let s = &mut self.shards[shard];
                s.nodes[node as usize].live = false;
                s.node_gen[node as usize] += 1;
                self.trace.record(now, format!("shard-{shard}"), "node_crash", json!({
                    "node": node,
                }));
            }
            FaultAction::Recover => {
                let was_leader;
                {
                    let s = &mut self.shards[shard];
                    s.nodes[node as usize].live = true;
                    s.nodes[node as usize].last_heartbeat = now;
                    s.node_gen[node as usize] += 1;
                    was_leader = s.leader == node && s.nodes[node as usize].term == s.term;
                    s.nodes[node as usize].role =
                        if was_leader { NodeRole::Leader } else { NodeRole::Follower };
                }
                self.trace.record(now, format!("shard-{shard}"), "node_recover", json!({
                    "node": node,
                    "as_leader": was_leader,
                }));
                let gen = self.shards[shard].node_gen[node as usize];
                q.schedule(
                    now + self.rs.cfg.heartbeat_interval,
                    Ev::HeartbeatCheck { shard, node, gen },
                )
                .unwrap();
                if was_leader {
                    // No election happened while it was down; it carries on.
                    let term = self.shards[shard].term;
                    q.schedule(now, Ev::HeartbeatSend { shard, term }).unwrap();
                }
            }
        }
    }

    // ---- mainchain observer ----

    fn handle_submit_main_tx(&mut self, tx: MainchainTx, q: &mut EventQueue<Ev>, now: SimTime) {
        let tx_id = tx.tx_id;
        let sender = tx.sender_shard_id.clone();
        let approves: Vec<String> = tx.approves.iter().map(|a| a.to_hex()).collect();
        match self.ledger.submit_tx(tx, now) {
            Ok(()) => {
                self.trace.record(now, "mainchain", "main_tx", json!({
                    "tx_id": tx_id.to_hex(),
                    "sender": sender,
                    "approves": approves,
                }));
                debug_assert!(self.ledger.verify_structure());
                if let Some(f) = self.ledger.freshness() {
                    q.schedule(now + f, Ev::TipDeadline).unwrap();
                }
                self.shard_txs += 1;
                let epoch = self.current_epoch();
                if !self.stopping {
                    if let TerminationRule::MaxGlobalEpochs { epochs } = self.rs.cfg.termination {
                        if epoch >= epochs {
                            self.initiate_stop("max_epochs", q, now);
                            return;
                        }
                    }
                    if epoch >= self.rs.cfg.epoch_hard_cap {
                        self.initiate_stop("epoch_hard_cap", q, now);
                    }
                }
            }
            Err(e) => {
                self.trace.record(now, "mainchain", "main_tx_rejected", json!({
                    "tx_id": tx_id.to_hex(),
                    "error": e.to_string(),
                }));
            }
        }
    }

    fn handle_plant_tx(&mut self, index: usize, q: &mut EventQueue<Ev>, now: SimTime) {
        let spec = self.rs.cfg.planted_txs[index].clone();
        let params = match ParamVector::new(spec.params) {
            Ok(p) => p,
            Err(e) => {
                self.trace.record(now, "mainchain", "plant_failed", json!({ "error": e.to_string() }));
                return;
            }
        };
        let hash = put_params(&mut self.store, &params).expect("store planted params");
        let genesis = self.ledger.genesis_id().expect("genesis exists");
        let tx = MainchainTx::new(spec.sender, self.task_id.clone(), hash, vec![genesis], now);
        let tx_id = tx.tx_id;
        match self.ledger.submit_tx(tx, now) {
            Ok(()) => {
                self.trace.record(now, "mainchain", "planted_tx", json!({
                    "tx_id": tx_id.to_hex(),
                }));
                if let Some(f) = self.ledger.freshness() {
                    q.schedule(now + f, Ev::TipDeadline).unwrap();
                }
            }
            Err(e) => {
                self.trace.record(now, "mainchain", "plant_failed", json!({ "error": e.to_string() }));
            }
        }
    }

    fn handle_tip_deadline(&mut self, now: SimTime) {
        for id in self.ledger.prune_expired(now) {
            self.trace.record(now, "mainchain", "tip_pruned", json!({ "tx_id": id.to_hex() }));
        }
    }

    fn evaluate_global(&mut self, now: SimTime) -> Option<(ParamVector, MetricValue, f64)> {
        let built = self
            .ledger
            .aggregate_global(
                self.rs.lambda_g as usize,
                now,
                &self.rs.task.test_set,
                &self.loss_kind(),
                &self.store,
            )
            .ok()?;
        let metric = primary_metric(&built.params, &self.rs.task.test_set, &self.loss_kind()).ok()?;
        let loss = evaluate_loss(&built.params, &self.rs.task.test_set, &self.loss_kind()).ok()?;
        Some((built.params, metric, loss.value))
    }

    fn push_row(&mut self, now: SimTime, params: ParamVector, metric: MetricValue, loss: f64) {
        let row = MetricsRow {
            paradigm: Paradigm::ChainFl,
            seed: self.rs.cfg.seed,
            global_epoch: self.current_epoch(),
            gradients: self.gradients,
            sim_time: now,
            metric_kind: metric.kind,
            metric_value: metric.value,
            loss,
        };
        self.trace.record(now, "observer", "eval", json!({
            "epoch": row.global_epoch,
            "gradients": row.gradients,
            "metric": metric.value,
            "loss": loss,
        }));
        self.rows.push(row);
        self.final_params = Some(params);
        self.final_metric = Some(metric);
        self.final_loss = Some(loss);
    }

    fn handle_eval_tick(&mut self, q: &mut EventQueue<Ev>, now: SimTime) {
        if self.stopping {
            return;
        }
        if let Some((params, metric, loss)) = self.evaluate_global(now) {
            let epoch = self.current_epoch();
            self.push_row(now, params, metric, loss);
            if check_stop(&self.rs.cfg.termination, &metric, epoch) {
                self.initiate_stop("termination", q, now);
                return;
            }
        }
        q.schedule(now + self.rs.eval_period, Ev::EvalTick).unwrap();
    }

    fn initiate_stop(&mut self, reason: &str, q: &mut EventQueue<Ev>, now: SimTime) {
        if self.stopping {
            return;
        }
        self.stopping = true;
        self.trace.record(now, "observer", "stop", json!({ "reason": reason }));
        if self.rows.last().map(|r| r.sim_time) != Some(now) {
            if let Some((params, metric, loss)) = self.evaluate_global(now) {
                self.push_row(now, params, metric, loss);
            }
        }
        for s in 0..self.rs.cfg.shards {
            let lat = self.lat_main(s);
            q.schedule(now + lat, Ev::StopAtShard { shard: s }).unwrap();
        }
    }

    fn handle_stop_at_shard(&mut self, shard: usize, now: SimTime) {
        let s = &mut self.shards[shard];
        s.stopped = true;
        match s.phase {
            Phase::Stalled | Phase::Done => {}
            _ => {
                // Break out of the iteration loop: abandon in-flight work.
                s.attempt_gen += 1;
                s.phase = Phase::Done;
            }
        }
        self.trace.record(now, format!("shard-{shard}"), "stop_received", json!({}));
    }
}

impl EventHandler for World {
    type Ev = Ev;

    fn handle(&mut self, now: SimTime, ev: Ev, q: &mut EventQueue<Ev>) {
        match ev {
            Ev::IterationKick { shard } => self.begin_iteration(shard, q, now),
            Ev::TipsRequestArrive { shard } => self.handle_tips_request(shard, q, now),
            Ev::TipsResponse { shard, tips } => self.handle_tips_response(shard, tips, q, now),
            Ev::SelectRetry { shard, gen } => {
                if self.shards[shard].attempt_gen == gen
                    && matches!(self.shards[shard].phase, Phase::Selecting)
                    && self.shards[shard].leader_live()
                {
                    self.attempt_selection(shard, q, now);
                }
            }
            Ev::RoundCtxMsg { shard, node, round_key, a_tau_score } => {
                if self.shards[shard].nodes[node as usize].live {
                    self.shards[shard].follower_ctx[node as usize] = Some((round_key, a_tau_score));
                }
            }
            Ev::DeviceFinish { shard, round_key, device, node, tx } => {
                self.handle_device_finish(shard, round_key, device, node, tx, q, now)
            }
            Ev::TxAtNode { shard, node, round_key, device, tx } => {
                self.handle_tx_at_node(shard, node, round_key, device, tx, q, now)
            }
            Ev::LeaderTx { shard, round_key, device, tx, score: _ } => {
                self.handle_leader_tx(shard, round_key, device, tx, q, now)
            }
            Ev::RoundTimeout { shard, round_key } => {
                self.handle_round_timeout(shard, round_key, q, now)
            }
            Ev::BlockTick { shard } => self.handle_block_tick(shard, q, now),
            Ev::AppendBlock { shard, node, block } => {
                self.handle_append_block(shard, node, block, q, now)
            }
            Ev::AckBlock { shard, from, block_no, hash } => {
                self.handle_ack_block(shard, from, block_no, hash, q, now)
            }
            Ev::CommitBlock { shard, node, block } => {
                self.handle_commit_block(shard, node, block, q, now)
            }
            Ev::HeartbeatSend { shard, term } => self.handle_heartbeat_send(shard, term, q, now),
            Ev::HeartbeatArrive { shard, node, term, leader, committed } => {
                self.handle_heartbeat_arrive(shard, node, term, leader, committed, q, now)
            }
            Ev::HeartbeatCheck { shard, node, gen } => {
                self.handle_heartbeat_check(shard, node, gen, q, now)
            }
            Ev::LogSyncReq { shard, from, have } => {
                self.handle_log_sync_req(shard, from, have, q, now)
            }
            Ev::LogSyncResp { shard, node, blocks } => {
                self.handle_log_sync_resp(shard, node, blocks, now)
            }
            Ev::SubmitMainTx { tx } => self.handle_submit_main_tx(tx, q, now),
            Ev::TipDeadline => self.handle_tip_deadline(now),
            Ev::EvalTick => self.handle_eval_tick(q, now),
            Ev::StopAtShard { shard } => self.handle_stop_at_shard(shard, now),
            Ev::PlantTx { index } => self.handle_plant_tx(index, q, now),
            Ev::Fault { shard, node, action } => self.handle_fault(shard, node, action, q, now),
        }
    }
}

/// Runs the full two-layer protocol for one scenario.
pub fn run_chainfl(rs: &ResolvedScenario) -> Result<RunOutput, EngineError> {
    let mut world = World::new(rs.clone())?;
    let mut q = EventQueue::new();
    world.schedule_initial(&mut q);
    let (end_time, end) = run_until(
        &mut world,
        &mut q,
        Some(rs.t_max),
        Some(Duration::from_secs(600)),
    )?;

    let end = match end {
        RunEnd::TimeLimit => {
            if world.stopping {
                RunEndKind::Stopped
            } else {
                RunEndKind::TimeLimit
            }
        }
        _ if world.stopping => RunEndKind::Stopped,
        _ => RunEndKind::Starved,
    };
    if world.final_params.is_none() {
        if let Some((params, metric, loss)) = world.evaluate_global(end_time) {
            world.final_params = Some(params);
            world.final_metric = Some(metric);
            world.final_loss = Some(loss);
        }
    }

    let shard_logs = world
        .shards
        .iter()
        .map(|s| s.nodes.iter().map(|n| n.log.clone()).collect())
        .collect();
    Ok(RunOutput {
        rows: world.rows,
        trace: world.trace,
        dag_export: world.ledger.export(),
        final_params: world.final_params,
        final_metric: world.final_metric,
        final_loss: world.final_loss,
        epochs: (world.shard_txs / rs.cfg.shards as u64) as u32,
        gradients: world.gradients,
        notes: world.notes,
        end,
        end_time,
        ledger: world.ledger,
        store: world.store,
        shard_logs,
    })
}
