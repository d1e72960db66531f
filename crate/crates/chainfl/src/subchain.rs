//! Shard-level consortium chain: transaction and block types, validation
//! against the round threshold, deterministic block formation, and the
//! crash-detect/re-elect abstraction over a Raft-style node group of
//! `b = 2a + 1` nodes. Message passing and timers live in the engine; the
//! functions here are the pure state transitions it drives.

use crate::device::StatusReport;
use crate::learning::{primary_metric, LossKind};
use crate::store::{get_params, hash_bytes, ContentHash, ObjectStore};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SubchainError {
    #[error("block {0} fails chain verification")]
    BrokenChain(u64),
    #[error("empty block")]
    EmptyBlock,
}

/// A local-model publication from a device, or a round/iteration record
/// from the shard leader. Parameter payloads travel by content hash only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubchainTx {
    pub sender_id: String,
    pub task_id: String,
    pub round_no: u32,
    pub params_hash: ContentHash,
    pub timestamp: u64,
    pub signature: String,
}

/// Entry in a subchain block. Besides device transactions the leader logs
/// the start of each iteration (with its mainchain approve set) and each
/// round's basic round model; a newly elected leader resumes from these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubchainRecord {
    Device(SubchainTx),
    IterationStart {
        task_id: String,
        bim_hash: ContentHash,
        approve_set: Vec<ContentHash>,
        timestamp: u64,
    },
    RoundModel {
        task_id: String,
        round_no: u32,
        params_hash: ContentHash,
        timestamp: u64,
    },
}

impl SubchainRecord {
    pub fn timestamp(&self) -> u64 {
        match self {
            SubchainRecord::Device(tx) => tx.timestamp,
            SubchainRecord::IterationStart { timestamp, .. } => *timestamp,
            SubchainRecord::RoundModel { timestamp, .. } => *timestamp,
        }
    }

    /// Sender key used for tie-breaks; leader records sort under "sln".
    pub fn sender_key(&self) -> &str {
        match self {
            SubchainRecord::Device(tx) => &tx.sender_id,
            _ => "sln",
        }
    }

    fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            SubchainRecord::Device(tx) => {
                out.push(0u8);
                push_str(&mut out, &tx.sender_id);
                push_str(&mut out, &tx.task_id);
                out.extend_from_slice(&tx.round_no.to_le_bytes());
                out.extend_from_slice(tx.params_hash.as_bytes());
                out.extend_from_slice(&tx.timestamp.to_le_bytes());
                push_str(&mut out, &tx.signature);
            }
            SubchainRecord::IterationStart { task_id, bim_hash, approve_set, timestamp } => {
                out.push(1u8);
                push_str(&mut out, task_id);
                out.extend_from_slice(bim_hash.as_bytes());
                out.extend_from_slice(&(approve_set.len() as u32).to_le_bytes());
                for id in approve_set {
                    out.extend_from_slice(id.as_bytes());
                }
                out.extend_from_slice(&timestamp.to_le_bytes());
            }
            SubchainRecord::RoundModel { task_id, round_no, params_hash, timestamp } => {
                out.push(2u8);
                push_str(&mut out, task_id);
                out.extend_from_slice(&round_no.to_le_bytes());
                out.extend_from_slice(params_hash.as_bytes());
                out.extend_from_slice(&timestamp.to_le_bytes());
            }
        }
        out
    }
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub block_no: u64,
    pub prev_hash: ContentHash,
    pub records: Vec<SubchainRecord>,
    pub leader_id: u32,
    pub term: u64,
}

impl Block {
    pub fn hash(&self) -> ContentHash {
        let mut out = Vec::new();
        out.extend_from_slice(b"block-v1");
        out.extend_from_slice(&self.block_no.to_le_bytes());
        out.extend_from_slice(self.prev_hash.as_bytes());
        out.extend_from_slice(&self.leader_id.to_le_bytes());
        out.extend_from_slice(&self.term.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            let bytes = r.canonical_bytes();
            out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        hash_bytes(&out)
    }
}

/// Hash of the empty chain; block 0 links to this.
pub fn genesis_prev_hash() -> ContentHash {
    hash_bytes(b"subchain-empty")
}

/// Sorts records by generation time with sender id as the deterministic
/// tie-break, so any permutation of the same set forms the same block.
pub fn order_records(records: &mut [SubchainRecord]) {
    records.sort_by(|a, b| {
        (a.timestamp(), a.sender_key(), a.canonical_bytes())
            .cmp(&(b.timestamp(), b.sender_key(), b.canonical_bytes()))
    });
}

/// Builds the next block from pending records; `None` if there is nothing
/// to pack. Ordering is canonical regardless of arrival order.
pub fn form_block(
    pending: &mut Vec<SubchainRecord>,
    prev: Option<&Block>,
    leader_id: u32,
    term: u64,
) -> Option<Block> {
    if pending.is_empty() {
        return None;
    }
    let mut records = std::mem::take(pending);
    order_records(&mut records);
    let (block_no, prev_hash) = match prev {
        Some(p) => (p.block_no + 1, p.hash()),
        None => (0, genesis_prev_hash()),
    };
    Some(Block { block_no, prev_hash, records, leader_id, term })
}

/// Checks hash links and numbering over a committed log.
pub fn verify_chain(log: &[Block]) -> Result<(), SubchainError> {
    let mut prev_hash = genesis_prev_hash();
    for (i, b) in log.iter().enumerate() {
        if b.records.is_empty() {
            return Err(SubchainError::EmptyBlock);
        }
        if b.block_no != i as u64 || b.prev_hash != prev_hash {
            return Err(SubchainError::BrokenChain(b.block_no));
        }
        prev_hash = b.hash();
    }
    Ok(())
}

/// Follower acks needed to commit: at least half of the `b - 1` followers.
pub fn commit_threshold(b: u32) -> u32 {
    b.saturating_sub(1).div_ceil(2)
}

/// Live nodes needed for an election to produce a leader.
pub fn majority(b: u32) -> u32 {
    b / 2 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRole {
    Leader,
    Follower,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: u32,
    pub role: NodeRole,
    pub live: bool,
    pub term: u64,
    pub log: Vec<Block>,
    pub last_heartbeat: u64,
}

impl NodeState {
    pub fn new(node_id: u32) -> Self {
        Self { node_id, role: NodeRole::Follower, live: true, term: 0, log: Vec::new(), last_heartbeat: 0 }
    }

    pub fn committed_len(&self) -> u64 {
        self.log.len() as u64
    }
}

/// Deterministic election among live nodes: requires a live majority and
/// picks the longest committed log, then the highest node id. Returns the
/// winner; the caller installs roles and bumps the term.
pub fn elect_leader(nodes: &[NodeState]) -> Option<u32> {
    let b = nodes.len() as u32;
    let live: Vec<&NodeState> = nodes.iter().filter(|n| n.live).collect();
    if (live.len() as u32) < majority(b) {
        return None;
    }
    live.iter()
        .max_by_key(|n| (n.committed_len(), n.node_id))
        .map(|n| n.node_id)
}

/// All live nodes agree on the committed prefix: pairwise, the shorter log
/// is a block-for-block prefix of the longer.
pub fn prefix_consistent(nodes: &[NodeState]) -> bool {
    let live: Vec<&NodeState> = nodes.iter().filter(|n| n.live).collect();
    for i in 0..live.len() {
        for j in i + 1..live.len() {
            let (short, long) = if live[i].log.len() <= live[j].log.len() {
                (&live[i].log, &live[j].log)
            } else {
                (&live[j].log, &live[i].log)
            };
            for (a, b) in short.iter().zip(long.iter()) {
                if a.hash() != b.hash() {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub enum TxVerdict {
    Valid { score: f64 },
    Invalid(InvalidReason),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InvalidReason {
    /// Metric score did not strictly exceed the round threshold.
    BelowThreshold { score: f64, threshold: f64 },
    /// Parameter hash does not resolve in the object store.
    UnresolvedHash,
    /// Signature placeholder missing.
    MissingSignature,
    /// Parameter blob resolves but cannot be evaluated against the task.
    Unevaluable,
}

impl InvalidReason {
    pub fn label(&self) -> &'static str {
        match self {
            InvalidReason::BelowThreshold { .. } => "below_threshold",
            InvalidReason::UnresolvedHash => "unresolved_hash",
            InvalidReason::MissingSignature => "missing_signature",
            InvalidReason::Unevaluable => "unevaluable",
        }
    }
}

/// Validates a device transaction: signature present, parameters resolvable,
/// and the task metric *strictly* above the round threshold. A score equal
/// to the threshold is rejected.
pub fn validate_tx(
    tx: &SubchainTx,
    test_set: &crate::learning::LabeledDataset,
    loss_kind: &LossKind,
    a_tau_score: f64,
    store: &impl ObjectStore,
) -> TxVerdict {
    if tx.signature.is_empty() {
        return TxVerdict::Invalid(InvalidReason::MissingSignature);
    }
    let params = match get_params(store, &tx.params_hash) {
        Ok(p) => p,
        Err(_) => return TxVerdict::Invalid(InvalidReason::UnresolvedHash),
    };
    let metric = match primary_metric(&params, test_set, loss_kind) {
        Ok(m) => m,
        Err(_) => return TxVerdict::Invalid(InvalidReason::Unevaluable),
    };
    let score = metric.score();
    if score > a_tau_score {
        TxVerdict::Valid { score }
    } else {
        TxVerdict::Invalid(InvalidReason::BelowThreshold { score, threshold: a_tau_score })
    }
}

/// Uniform sample of `s_d` eligible devices, or `None` when fewer than
/// `s_d` are eligible and the round must be postponed. Eligibility means
/// willing with battery and network at or above the floors.
pub fn select_devices(
    reports: &[StatusReport],
    s_d: usize,
    batt_min: f64,
    net_min: f64,
    rng: &mut impl Rng,
) -> Option<Vec<u32>> {
    let mut eligible: Vec<u32> = reports
        .iter()
        .filter(|r| r.willing && r.battery >= batt_min && r.network_quality >= net_min)
        .map(|r| r.device_id)
        .collect();
    if eligible.len() < s_d {
        return None;
    }
    // Partial Fisher-Yates over the id-sorted pool.
    eligible.sort_unstable();
    for i in 0..s_d {
        let j = rng.gen_range(i..eligible.len());
        eligible.swap(i, j);
    }
    eligible.truncate(s_d);
    Some(eligible)
}
