//! Mainchain DAG ledger. Shard models arrive asynchronously as vertices
//! approving earlier vertices; tips are the unapproved frontier. Every tip
//! carries a freshness deadline: a tip nobody picked as a candidate before
//! its deadline is virtually pruned (kept on disk, excluded from selection
//! forever). Selection as a candidate keeps a tip selectable indefinitely
//! until someone approves it.

use crate::learning::{primary_metric, uniform_aggregate, LabeledDataset, LossKind, MetricKind, MetricValue, ParamVector};
use crate::store::{get_params, hash_bytes, ContentHash, ObjectStore};
use crate::task::TerminationRule;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MainchainError {
    #[error("ledger already has a genesis transaction")]
    DuplicateGenesis,
    #[error("ledger has no genesis transaction")]
    NoGenesis,
    #[error("transaction id does not match its content")]
    BadTxId,
    #[error("non-genesis transaction must approve at least one vertex")]
    EmptyApproves,
    #[error("approved vertex {0} is unknown")]
    UnknownApproval(ContentHash),
    #[error("approved vertex {0} is pruned")]
    ApprovesPruned(ContentHash),
    #[error("transaction {0} already exists")]
    DuplicateTx(ContentHash),
    #[error("no tip carries an evaluable model")]
    NoEvaluableTips,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MainchainTx {
    pub tx_id: ContentHash,
    pub sender_shard_id: String,
    pub task_id: String,
    pub params_hash: ContentHash,
    pub approves: Vec<ContentHash>,
    pub timestamp: u64,
}

impl MainchainTx {
    /// Builds a transaction with its content-derived id.
    pub fn new(
        sender_shard_id: String,
        task_id: String,
        params_hash: ContentHash,
        approves: Vec<ContentHash>,
        timestamp: u64,
    ) -> Self {
        let tx_id = compute_tx_id(&sender_shard_id, &task_id, &params_hash, &approves, timestamp);
        Self { tx_id, sender_shard_id, task_id, params_hash, approves, timestamp }
    }
}

pub fn compute_tx_id(
    sender: &str,
    task: &str,
    params_hash: &ContentHash,
    approves: &[ContentHash],
    timestamp: u64,
) -> ContentHash {
    let mut out = Vec::new();
    out.extend_from_slice(b"mc-tx-v1");
    out.extend_from_slice(&(sender.len() as u32).to_le_bytes());
    out.extend_from_slice(sender.as_bytes());
    out.extend_from_slice(&(task.len() as u32).to_le_bytes());
    out.extend_from_slice(task.as_bytes());
    out.extend_from_slice(params_hash.as_bytes());
    out.extend_from_slice(&(approves.len() as u32).to_le_bytes());
    for a in approves {
        out.extend_from_slice(a.as_bytes());
    }
    out.extend_from_slice(&timestamp.to_le_bytes());
    hash_bytes(&out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TipStatus {
    FreshTip,
    Approved,
    Pruned,
}

impl TipStatus {
    pub fn label(&self) -> &'static str {
        match self {
            TipStatus::FreshTip => "fresh",
            TipStatus::Approved => "approved",
            TipStatus::Pruned => "pruned",
        }
    }
}

/// Lifecycle record for a vertex. `freshness_deadline` is `None` for the
/// genesis vertex (exempt from pruning) and for ledgers with unlimited
/// freshness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipRecord {
    pub tx_id: ContentHash,
    pub received_at: u64,
    pub freshness_deadline: Option<u64>,
    pub candidacy_count: u32,
    pub status: TipStatus,
}

#[derive(Debug, Clone)]
pub struct DagLedger {
    freshness: Option<u64>,
    vertices: BTreeMap<ContentHash, MainchainTx>,
    records: BTreeMap<ContentHash, TipRecord>,
    /// Insertion order; drives deterministic export and sampling.
    order: Vec<ContentHash>,
    genesis: Option<ContentHash>,
    genesis_doc: Vec<u8>,
}

impl DagLedger {
    pub fn new(freshness: Option<u64>) -> Self {
        Self {
            freshness,
            vertices: BTreeMap::new(),
            records: BTreeMap::new(),
            order: Vec::new(),
            genesis: None,
            genesis_doc: Vec::new(),
        }
    }

    pub fn freshness(&self) -> Option<u64> {
        self.freshness
    }

    /// Publishes the task: a vertex holding the initial model reference and
    /// the raw task document. Only one genesis may ever exist and it is
    /// never pruned.
    pub fn create_genesis(
        &mut self,
        doc: &[u8],
        task_id_root: &str,
        init_params_hash: ContentHash,
        now: u64,
    ) -> Result<ContentHash, MainchainError> {
        if self.genesis.is_some() {
            return Err(MainchainError::DuplicateGenesis);
        }
        let tx = MainchainTx::new("genesis".into(), task_id_root.into(), init_params_hash, Vec::new(), now);
        let id = tx.tx_id;
        self.records.insert(id, TipRecord {
            tx_id: id,
            received_at: now,
            freshness_deadline: None,
            candidacy_count: 0,
            status: TipStatus::FreshTip,
        });
        self.vertices.insert(id, tx);
        self.order.push(id);
        self.genesis = Some(id);
        self.genesis_doc = doc.to_vec();
        Ok(id)
    }

    pub fn genesis_id(&self) -> Option<ContentHash> {
        self.genesis
    }

    pub fn genesis_doc(&self) -> &[u8] {
        &self.genesis_doc
    }

    pub fn vertex(&self, id: &ContentHash) -> Option<&MainchainTx> {
        self.vertices.get(id)
    }

    pub fn record(&self, id: &ContentHash) -> Option<&TipRecord> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices_in_order(&self) -> impl Iterator<Item = &MainchainTx> {
        self.order.iter().map(|id| &self.vertices[id])
    }

    fn would_prune(&self, rec: &TipRecord, now: u64) -> bool {
        rec.status == TipStatus::FreshTip
            && rec.candidacy_count == 0
            && rec.freshness_deadline.is_some_and(|d| now >= d)
            && Some(rec.tx_id) != self.genesis
    }

    /// Marks every fresh tip whose deadline has passed with zero candidacies
    /// as pruned. Idempotent; returns the ids pruned by this call.
    pub fn prune_expired(&mut self, now: u64) -> Vec<ContentHash> {
        let ids: Vec<ContentHash> = self
            .order
            .iter()
            .filter(|id| self.would_prune(&self.records[*id], now))
            .cloned()
            .collect();
        for id in &ids {
            self.records.get_mut(id).unwrap().status = TipStatus::Pruned;
        }
        ids
    }

    /// Fresh tips that are currently allowed into candidate selection.
    pub fn selectable_ids(&self, now: u64) -> Vec<ContentHash> {
        self.order
            .iter()
            .filter(|id| {
                let rec = &self.records[*id];
                rec.status == TipStatus::FreshTip && !self.would_prune(rec, now)
            })
            .cloned()
            .collect()
    }

    /// Most recent approved vertex (falling back to genesis), used when the
    /// tip set is empty so aggregation never starves.
    pub fn fallback_vertex(&self) -> Option<ContentHash> {
        self.order
            .iter()
            .filter(|id| self.records[*id].status == TipStatus::Approved)
            .max_by_key(|id| (self.vertices[*id].timestamp, **id))
            .cloned()
            .or(self.genesis)
    }

    /// Samples up to `eta` distinct selectable tips uniformly, recording a
    /// candidacy on each. Expired unselected tips are pruned first. With no
    /// selectable tip the fallback vertex is returned without a candidacy
    /// (it is not a tip).
    pub fn request_tips(
        &mut self,
        eta: usize,
        now: u64,
        rng: &mut impl Rng,
    ) -> Result<Vec<MainchainTx>, MainchainError> {
        if self.genesis.is_none() {
            return Err(MainchainError::NoGenesis);
        }
        self.prune_expired(now);
        let mut pool = self.selectable_ids(now);
        if pool.is_empty() {
            let fb = self.fallback_vertex().expect("genesis exists");
            return Ok(vec![self.vertices[&fb].clone()]);
        }
        let k = eta.min(pool.len());
        for i in 0..k {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(k);
        for id in &pool {
            self.records.get_mut(id).unwrap().candidacy_count += 1;
        }
        Ok(pool.iter().map(|id| self.vertices[id].clone()).collect())
    }

    /// Appends a shard transaction. Approving an unknown or pruned vertex
    /// rejects the whole transaction; approving an already-approved vertex
    /// is allowed and simply adds an edge. Forks (several txs approving the
    /// same tips) are normal DAG growth.
    pub fn submit_tx(&mut self, tx: MainchainTx, now: u64) -> Result<(), MainchainError> {
        if self.genesis.is_none() {
            return Err(MainchainError::NoGenesis);
        }
        let expect = compute_tx_id(&tx.sender_shard_id, &tx.task_id, &tx.params_hash, &tx.approves, tx.timestamp);
        if expect != tx.tx_id {
            return Err(MainchainError::BadTxId);
        }
        if tx.approves.is_empty() {
            return Err(MainchainError::EmptyApproves);
        }
        if self.vertices.contains_key(&tx.tx_id) {
            return Err(MainchainError::DuplicateTx(tx.tx_id));
        }
        for a in &tx.approves {
            match self.records.get(a) {
                None => return Err(MainchainError::UnknownApproval(*a)),
                Some(rec) if rec.status == TipStatus::Pruned => {
                    return Err(MainchainError::ApprovesPruned(*a))
                }
                Some(_) => {}
            }
        }

        for a in &tx.approves {
            let rec = self.records.get_mut(a).unwrap();
            if rec.status == TipStatus::FreshTip {
                rec.status = TipStatus::Approved;
            }
        }
        let id = tx.tx_id;
        self.records.insert(id, TipRecord {
            tx_id: id,
            received_at: now,
            freshness_deadline: self.freshness.map(|f| now + f),
            candidacy_count: 0,
            status: TipStatus::FreshTip,
        });
        self.vertices.insert(id, tx);
        self.order.push(id);
        Ok(())
    }

    /// Read-only observer aggregation over the current selectable tips with
    /// the same ranking procedure shards use; mutates nothing, records no
    /// candidacies. Falls back to the latest approved vertex (or genesis)
    /// when the tip set is empty.
    pub fn aggregate_global(
        &self,
        lambda_g: usize,
        now: u64,
        test_set: &LabeledDataset,
        loss_kind: &LossKind,
        store: &impl ObjectStore,
    ) -> Result<BasicModel, MainchainError> {
        if self.genesis.is_none() {
            return Err(MainchainError::NoGenesis);
        }
        let ids = self.selectable_ids(now);
        let candidates: Vec<MainchainTx> = if ids.is_empty() {
            let fb = self.fallback_vertex().expect("genesis exists");
            vec![self.vertices[&fb].clone()]
        } else {
            ids.iter().map(|id| self.vertices[id].clone()).collect()
        };
        build_basic_iteration_model(&candidates, lambda_g, test_set, loss_kind, store)
    }

    /// Tab-separated vertex lines in arrival order:
    /// `tx_id sender approves timestamp status` with comma-joined approval
    /// ids (`-` for genesis).
    pub fn export(&self) -> String {
        let mut out = String::new();
        for tx in self.vertices_in_order() {
            let approves = if tx.approves.is_empty() {
                "-".to_string()
            } else {
                tx.approves.iter().map(|a| a.to_hex()).collect::<Vec<_>>().join(",")
            };
            let status = self.records[&tx.tx_id].status.label();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                tx.tx_id.to_hex(),
                tx.sender_shard_id,
                approves,
                tx.timestamp,
                status
            ));
        }
        out
    }

    /// Structural soundness: every edge points to an earlier vertex in
    /// arrival order (hence no cycles) and every vertex reaches genesis.
    pub fn verify_structure(&self) -> bool {
        let Some(genesis) = self.genesis else { return self.vertices.is_empty() };
        let position: BTreeMap<ContentHash, usize> =
            self.order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        for (i, id) in self.order.iter().enumerate() {
            let tx = &self.vertices[id];
            for a in &tx.approves {
                match position.get(a) {
                    Some(&j) if j < i => {}
                    _ => return false,
                }
            }
            if *id != genesis && tx.approves.is_empty() {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct TipEval {
    pub tx_id: ContentHash,
    /// Higher-is-better metric score; `None` when the parameter hash does
    /// not resolve (such tips are reported but never selected).
    pub score: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BasicModel {
    pub params: ParamVector,
    pub approve_ids: Vec<ContentHash>,
    pub evals: Vec<TipEval>,
}

/// Ranks candidate tips by metric score (descending; ties by earlier
/// timestamp then lexicographic id) and returns the uniform mean of the top
/// `lambda` models together with their ids.
pub fn build_basic_iteration_model(
    tips: &[MainchainTx],
    lambda: usize,
    test_set: &LabeledDataset,
    loss_kind: &LossKind,
    store: &impl ObjectStore,
) -> Result<BasicModel, MainchainError> {
    let mut evals = Vec::with_capacity(tips.len());
    let mut scored: Vec<(f64, u64, ContentHash, ParamVector)> = Vec::new();
    for tx in tips {
        match get_params(store, &tx.params_hash) {
            Ok(params) => match primary_metric(&params, test_set, loss_kind) {
                Ok(m) => {
                    evals.push(TipEval { tx_id: tx.tx_id, score: Some(m.score()) });
                    scored.push((m.score(), tx.timestamp, tx.tx_id, params));
                }
                Err(_) => evals.push(TipEval { tx_id: tx.tx_id, score: None }),
            },
            Err(_) => evals.push(TipEval { tx_id: tx.tx_id, score: None }),
        }
    }
    if scored.is_empty() {
        return Err(MainchainError::NoEvaluableTips);
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(&b.1))
            .then_with(|| a.2.cmp(&b.2))
    });
    scored.truncate(lambda.max(1));
    let models: Vec<ParamVector> = scored.iter().map(|(_, _, _, p)| p.clone()).collect();
    let params = uniform_aggregate(&models).map_err(|_| MainchainError::NoEvaluableTips)?;
    let approve_ids = scored.iter().map(|(_, _, id, _)| *id).collect();
    Ok(BasicModel { params, approve_ids, evals })
}

/// Whether the application-layer stop condition holds.
pub fn check_stop(rule: &TerminationRule, metric: &MetricValue, epoch: u32) -> bool {
    match rule {
        TerminationRule::MaxGlobalEpochs { epochs } => epoch >= *epochs,
        TerminationRule::MetricThreshold { metric: kind, value } => {
            if metric.kind != *kind {
                return false;
            }
            match kind {
                MetricKind::Accuracy => metric.value >= *value,
                MetricKind::Loss | MetricKind::Perplexity => metric.value <= *value,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{Label, Sample};
    use crate::store::{put_params, MemoryStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn ledger_with_genesis(freshness: Option<u64>) -> (DagLedger, ContentHash, MemoryStore) {
        let mut store = MemoryStore::new();
        let init = put_params(&mut store, &ParamVector::zeros(1)).unwrap();
        let mut dag = DagLedger::new(freshness);
        let g = dag.create_genesis(b"task doc", "task-root", init, 0).unwrap();
        (dag, g, store)
    }

    fn shard_tx(store: &mut MemoryStore, c: f64, approves: Vec<ContentHash>, ts: u64) -> MainchainTx {
        let hash = put_params(store, &ParamVector::new(vec![c]).unwrap()).unwrap();
        MainchainTx::new("shard-0".into(), "task-root".into(), hash, approves, ts)
    }

    fn test_set() -> LabeledDataset {
        // Loss of w=[c] is c^2: smaller |c| scores higher.
        LabeledDataset::new(vec![Sample { features: vec![1.0], label: Label::Real(0.0) }]).unwrap()
    }

    #[test]
    fn genesis_is_deterministic_and_unique() {
        let (dag_a, g_a, _) = ledger_with_genesis(None);
        let (dag_b, g_b, _) = ledger_with_genesis(None);
        assert_eq!(g_a, g_b);
        assert_eq!(dag_a.genesis_doc(), dag_b.genesis_doc());

        let mut dag = dag_a;
        let init = dag.vertex(&g_a).unwrap().params_hash;
        assert_eq!(
            dag.create_genesis(b"again", "task-root", init, 5),
            Err(MainchainError::DuplicateGenesis)
        );
    }

    #[test]
    fn first_request_returns_genesis() {
        let (mut dag, g, _) = ledger_with_genesis(Some(100));
        let tips = dag.request_tips(3, 1, &mut ChaCha12Rng::seed_from_u64(0)).unwrap();
        assert_eq!(tips.len(), 1);
        assert_eq!(tips[0].tx_id, g);
        assert_eq!(dag.record(&g).unwrap().candidacy_count, 1);
    }

    #[test]
    fn submit_approves_and_rolls_tips() {
        let (mut dag, g, mut store) = ledger_with_genesis(None);
        let a = shard_tx(&mut store, 0.5, vec![g], 10);
        dag.submit_tx(a.clone(), 10).unwrap();
        assert_eq!(dag.record(&g).unwrap().status, TipStatus::Approved);
        assert_eq!(dag.record(&a.tx_id).unwrap().status, TipStatus::FreshTip);

        // A second tx approving genesis again is fine: approved vertices may
        // collect more approvals.
        let b = shard_tx(&mut store, 0.4, vec![g, a.tx_id], 12);
        dag.submit_tx(b.clone(), 12).unwrap();
        assert_eq!(dag.record(&a.tx_id).unwrap().status, TipStatus::Approved);
        assert_eq!(dag.selectable_ids(12), vec![b.tx_id]);
        assert!(dag.verify_structure());
    }

    #[test]
    fn submit_rejections() {
        let (mut dag, g, mut store) = ledger_with_genesis(Some(10));

        let unknown = shard_tx(&mut store, 0.1, vec![hash_bytes(b"ghost")], 1);
        assert!(matches!(dag.submit_tx(unknown, 1), Err(MainchainError::UnknownApproval(_))));

        let no_approves = shard_tx(&mut store, 0.1, vec![], 1);
        assert_eq!(dag.submit_tx(no_approves, 1), Err(MainchainError::EmptyApproves));

        let mut forged = shard_tx(&mut store, 0.1, vec![g], 1);
        forged.tx_id = hash_bytes(b"forged");
        assert_eq!(dag.submit_tx(forged, 1), Err(MainchainError::BadTxId));

        let a = shard_tx(&mut store, 0.2, vec![g], 2);
        dag.submit_tx(a.clone(), 2).unwrap();
        assert_eq!(dag.submit_tx(a.clone(), 3), Err(MainchainError::DuplicateTx(a.tx_id)));

        // Let a zero-candidacy tip expire, then try to approve it.
        let stale = shard_tx(&mut store, 0.3, vec![g], 3);
        dag.submit_tx(stale.clone(), 3).unwrap();
        dag.prune_expired(13);
        assert_eq!(dag.record(&stale.tx_id).unwrap().status, TipStatus::Pruned);
        let late = shard_tx(&mut store, 0.4, vec![stale.tx_id], 14);
        assert_eq!(dag.submit_tx(late, 14), Err(MainchainError::ApprovesPruned(stale.tx_id)));
    }

    #[test]
    fn pruning_spares_candidates_and_genesis() {
        let (mut dag, g, mut store) = ledger_with_genesis(Some(10));
        let a = shard_tx(&mut store, 0.5, vec![g], 1);
        dag.submit_tx(a.clone(), 1).unwrap();

        // `a` is the only selectable tip, so this candidacy lands on it.
        let picked = dag.request_tips(1, 2, &mut ChaCha12Rng::seed_from_u64(4)).unwrap();
        assert_eq!(picked[0].tx_id, a.tx_id);

        // `b` re-approves the already approved genesis and gets no candidacy.
        let b = shard_tx(&mut store, 0.6, vec![g], 3);
        dag.submit_tx(b.clone(), 3).unwrap();

        let pruned = dag.prune_expired(50);
        assert_eq!(pruned, vec![b.tx_id]);
        assert_eq!(dag.record(&a.tx_id).unwrap().status, TipStatus::FreshTip);
        assert_eq!(dag.record(&g).unwrap().status, TipStatus::Approved);

        // Genesis itself never expires even with a freshness limit set.
        let (mut lone, g2, _) = ledger_with_genesis(Some(10));
        assert!(lone.prune_expired(10_000).is_empty());
        assert_eq!(lone.record(&g2).unwrap().status, TipStatus::FreshTip);
    }

    #[test]
    fn candidacy_keeps_tip_selectable_past_deadline() {
        let (mut dag, g, mut store) = ledger_with_genesis(Some(5));
        let a = shard_tx(&mut store, 0.5, vec![g], 1);
        dag.submit_tx(a.clone(), 1).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let first = dag.request_tips(2, 2, &mut rng).unwrap();
        assert!(first.iter().any(|t| t.tx_id == a.tx_id));

        // Far beyond the deadline the tip is still offered: it was a
        // candidate once, so only approval retires it.
        let later = dag.request_tips(2, 500, &mut rng).unwrap();
        assert!(later.iter().any(|t| t.tx_id == a.tx_id));
        assert!(dag.prune_expired(1000).is_empty());
    }

    #[test]
    fn fallback_after_all_tips_retired() {
        let (mut dag, g, mut store) = ledger_with_genesis(Some(5));
        let a = shard_tx(&mut store, 0.5, vec![g], 1);
        dag.submit_tx(a.clone(), 1).unwrap();
        let b = shard_tx(&mut store, 0.6, vec![a.tx_id], 2);
        dag.submit_tx(b.clone(), 2).unwrap();
        // b expires with zero candidacies; only pruned and approved remain.
        dag.prune_expired(20);
        let tips = dag.request_tips(3, 21, &mut ChaCha12Rng::seed_from_u64(0)).unwrap();
        assert_eq!(tips.len(), 1);
        assert_eq!(tips[0].tx_id, a.tx_id, "latest approved vertex is the fallback");
        assert_eq!(dag.record(&a.tx_id).unwrap().candidacy_count, 0, "fallback adds no candidacy");
    }

    #[test]
    fn ranking_picks_top_lambda_with_deterministic_ties() {
        let mut store = MemoryStore::new();
        let test = test_set();
        let mk = |store: &mut MemoryStore, c: f64, ts: u64| -> MainchainTx {
            let h = put_params(store, &ParamVector::new(vec![c]).unwrap()).unwrap();
            MainchainTx::new(format!("shard-{ts}"), "t".into(), h, vec![hash_bytes(b"x")], ts)
        };
        let best = mk(&mut store, 0.1, 30);
        let mid = mk(&mut store, 0.5, 20);
        let worst = mk(&mut store, 2.0, 10);
        let tips = vec![worst.clone(), mid.clone(), best.clone()];
        let got = build_basic_iteration_model(&tips, 2, &test, &LossKind::SquaredError, &store).unwrap();
        assert_eq!(got.approve_ids, vec![best.tx_id, mid.tx_id]);
        // Mean of [0.1] and [0.5].
        assert!((got.params.values()[0] - 0.3).abs() < 1e-15);

        // Equal scores: earlier timestamp wins.
        let tie_early = mk(&mut store, 0.5, 5);
        let got = build_basic_iteration_model(
            &[mid.clone(), tie_early.clone()],
            1,
            &test,
            &LossKind::SquaredError,
            &store,
        )
        .unwrap();
        assert_eq!(got.approve_ids, vec![tie_early.tx_id]);
    }

    #[test]
    fn unresolved_models_are_reported_not_selected() {
        let mut store = MemoryStore::new();
        let test = test_set();
        let good_hash = put_params(&mut store, &ParamVector::new(vec![0.2]).unwrap()).unwrap();
        let good = MainchainTx::new("s".into(), "t".into(), good_hash, vec![hash_bytes(b"x")], 1);
        let ghost = MainchainTx::new("s".into(), "t".into(), hash_bytes(b"missing"), vec![hash_bytes(b"x")], 2);
        let got = build_basic_iteration_model(
            &[ghost.clone(), good.clone()],
            2,
            &test,
            &LossKind::SquaredError,
            &store,
        )
        .unwrap();
        assert_eq!(got.approve_ids, vec![good.tx_id]);
        let ghost_eval = got.evals.iter().find(|e| e.tx_id == ghost.tx_id).unwrap();
        assert!(ghost_eval.score.is_none());

        let only_ghost = build_basic_iteration_model(&[ghost], 1, &test, &LossKind::SquaredError, &store);
        assert!(matches!(only_ghost, Err(MainchainError::NoEvaluableTips)));
    }

    #[test]
    fn observer_aggregation_is_read_only_and_matches_shard_procedure() {
        let (mut dag, g, mut store) = ledger_with_genesis(None);
        let a = shard_tx(&mut store, 0.5, vec![g], 1);
        let b = shard_tx(&mut store, 0.1, vec![g], 2);
        dag.submit_tx(a.clone(), 1).unwrap();
        dag.submit_tx(b.clone(), 2).unwrap();

        let before = dag.export();
        let test = test_set();
        let got = dag.aggregate_global(2, 3, &test, &LossKind::SquaredError, &store).unwrap();
        assert_eq!(dag.export(), before, "observer must not mutate the ledger");
        assert_eq!(dag.record(&a.tx_id).unwrap().candidacy_count, 0);

        let direct = build_basic_iteration_model(
            &[dag.vertex(&a.tx_id).unwrap().clone(), dag.vertex(&b.tx_id).unwrap().clone()],
            2,
            &test,
            &LossKind::SquaredError,
            &store,
        )
        .unwrap();
        assert_eq!(got.params, direct.params);
    }

    #[test]
    fn export_lists_all_vertices_with_status() {
        let (mut dag, g, mut store) = ledger_with_genesis(Some(5));
        let a = shard_tx(&mut store, 0.5, vec![g], 1);
        dag.submit_tx(a.clone(), 1).unwrap();
        let b = shard_tx(&mut store, 0.7, vec![g], 2);
        dag.submit_tx(b.clone(), 2).unwrap();
        dag.prune_expired(10);

        let text = dag.export();
        assert_eq!(text.lines().count(), 3);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].contains("genesis") && lines[0].ends_with("approved"));
        assert!(lines[1].ends_with("pruned"));
        assert!(lines[2].ends_with("pruned"));
        assert!(lines[1].contains(&g.to_hex()), "approves column carries parent ids");
    }

    #[test]
    fn stop_conditions() {
        let acc = MetricValue::new(MetricKind::Accuracy, 0.96).unwrap();
        let loss = MetricValue::new(MetricKind::Loss, 0.5).unwrap();
        assert!(check_stop(&TerminationRule::MetricThreshold { metric: MetricKind::Accuracy, value: 0.95 }, &acc, 0));
        assert!(!check_stop(&TerminationRule::MetricThreshold { metric: MetricKind::Accuracy, value: 0.97 }, &acc, 0));
        assert!(check_stop(&TerminationRule::MetricThreshold { metric: MetricKind::Loss, value: 0.5 }, &loss, 0));
        assert!(!check_stop(&TerminationRule::MetricThreshold { metric: MetricKind::Loss, value: 0.4 }, &loss, 0));
        assert!(check_stop(&TerminationRule::MaxGlobalEpochs { epochs: 10 }, &loss, 10));
        assert!(!check_stop(&TerminationRule::MaxGlobalEpochs { epochs: 10 }, &loss, 9));
        // Kind mismatch never stops.
        assert!(!check_stop(&TerminationRule::MetricThreshold { metric: MetricKind::Accuracy, value: 0.9 }, &loss, 0));
    }
}
