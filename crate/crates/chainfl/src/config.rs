//! Scenario configuration. A scenario is one JSON document; unknown keys
//! are rejected so sweeps and diffs stay honest. `resolve` turns a parsed
//! config into concrete runtime material: the generated task, the device
//! pool with behaviors, and every derived timing default.

use crate::device::{AttackKind, Behavior, DeviceProfile};
use crate::learning::MetricKind;
use crate::sim::rng::RngFactory;
use crate::task::{
    generate_synthetic_classification, generate_synthetic_regression, GeneratedTask,
    PartitionScheme, TerminationRule, ValidationPolicy,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("invalid config: {}", .0.join("; "))]
pub struct ConfigError(pub Vec<String>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    ChainFl,
    FedAvg,
    AsynFl,
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Paradigm::ChainFl => "chainfl",
            Paradigm::FedAvg => "fedavg",
            Paradigm::AsynFl => "asynfl",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKindName {
    Regression,
    Classification,
}

/// What to learn. Regression draws per-device samples from one hidden
/// linear model (the partition field does not apply); classification blobs
/// are pooled and split by `partition`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskDescriptor {
    pub kind: TaskKindName,
    pub model_dim: usize,
    pub samples_per_device: usize,
    pub noise_sd: f64,
    pub classes: usize,
    pub partition: PartitionScheme,
}

impl Default for TaskDescriptor {
    fn default() -> Self {
        Self {
            kind: TaskKindName::Regression,
            model_dim: 5,
            samples_per_device: 40,
            noise_sd: 0.0,
            classes: 3,
            partition: PartitionScheme::NonIidSorted,
        }
    }
}

/// Tip freshness window: a number of ticks, `"unlimited"`, or `"auto"`
/// (4x the estimated iteration duration).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Freshness {
    Ticks(u64),
    Mode(FreshnessMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreshnessMode {
    Auto,
    Unlimited,
}

impl Default for Freshness {
    fn default() -> Self {
        Freshness::Mode(FreshnessMode::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    /// Uniform tick range for device<->node and node<->node hops in a shard.
    pub intra: [u64; 2],
    /// Uniform tick range for shard<->mainchain hops.
    pub to_mainchain: [u64; 2],
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self { intra: [1, 5], to_mainchain: [5, 15] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultAction {
    Crash,
    Recover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub at: u64,
    pub shard: usize,
    pub node: u32,
    pub action: FaultAction,
}

/// A junk transaction injected straight into the mainchain (approving the
/// genesis vertex) to exercise the pruning path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedTx {
    pub at: u64,
    pub params: Vec<f64>,
    #[serde(default = "default_planted_sender")]
    pub sender: String,
}

fn default_planted_sender() -> String {
    "planted".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub paradigm: Paradigm,

    /// M: shard count.
    pub shards: usize,
    /// b: subchain nodes per shard, odd, >= 3.
    pub nodes_per_shard: u32,
    /// S_d: devices selected per round.
    pub devices_per_round: usize,
    /// Device pool owned by each shard; defaults to S_d.
    pub device_pool_per_shard: Option<usize>,

    /// B, E, mu.
    pub batch_size: usize,
    pub local_epochs: u32,
    pub learning_rate: f64,
    /// R: rounds per shard iteration.
    pub rounds_per_iteration: u32,
    /// eta: tips requested per iteration.
    pub candidate_tips: u32,
    /// lambda: tips approved (averaged) per iteration; lambda < eta.
    pub approved_tips: u32,
    /// lambda_g for observer-side aggregation; defaults to lambda.
    pub global_tips: Option<u32>,
    /// F.
    pub freshness: Freshness,

    /// M_d in [0, 1).
    pub malicious_ratio: f64,
    pub straggler_ratio: f64,
    pub attack: AttackKind,
    /// Extra ticks a straggler adds to its compute time; defaults to just
    /// past the round timeout.
    pub straggler_extra_delay: Option<u64>,

    pub task: TaskDescriptor,
    pub validation: ValidationPolicy,
    pub termination: TerminationRule,
    /// Safety net: stop regardless of the termination rule at this epoch.
    pub epoch_hard_cap: u32,
    /// Optional cross-paradigm budget: stop once this many gradients
    /// (device local epochs) have been spent.
    pub gradient_budget: Option<u64>,

    pub quorum_fraction: f64,
    /// Ticks a round waits for device models; defaults to 3x the median
    /// honest compute time plus slack.
    pub round_timeout: Option<u64>,
    pub max_round_retries: u32,
    /// Delay before re-polling when fewer than S_d devices are eligible.
    pub selection_retry_delay: u64,
    pub battery_min: f64,
    pub network_min: f64,
    /// Per-poll random walk step for battery/network; 0 keeps them static.
    pub status_walk_step: f64,

    pub block_period: u64,
    pub heartbeat_interval: u64,
    pub heartbeat_timeout: u64,
    pub latency: LatencyModel,
    /// Uniform range for each device's per-epoch compute cost in ticks.
    pub compute_delay: [u64; 2],

    /// Observer evaluation cadence; defaults to the iteration estimate.
    pub eval_period: Option<u64>,
    pub t_max: Option<u64>,

    pub faults: Vec<FaultSpec>,
    pub planted_txs: Vec<PlantedTx>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 0,
            paradigm: Paradigm::ChainFl,
            shards: 3,
            nodes_per_shard: 3,
            devices_per_round: 10,
            device_pool_per_shard: None,
            batch_size: 10,
            local_epochs: 5,
            learning_rate: 0.05,
            rounds_per_iteration: 1,
            candidate_tips: 3,
            approved_tips: 2,
            global_tips: None,
            freshness: Freshness::default(),
            malicious_ratio: 0.0,
            straggler_ratio: 0.0,
            attack: AttackKind::GaussianNoise { sd: 1.0 },
            straggler_extra_delay: None,
            task: TaskDescriptor::default(),
            validation: ValidationPolicy::BasicRoundModelMetric,
            termination: TerminationRule::MaxGlobalEpochs { epochs: 30 },
            epoch_hard_cap: 10_000,
            gradient_budget: None,
            quorum_fraction: 2.0 / 3.0,
            round_timeout: None,
            max_round_retries: 5,
            selection_retry_delay: 50,
            battery_min: 0.2,
            network_min: 0.2,
            status_walk_step: 0.0,
            block_period: 25,
            heartbeat_interval: 50,
            heartbeat_timeout: 150,
            latency: LatencyModel::default(),
            compute_delay: [10, 30],
            eval_period: None,
            t_max: None,
            faults: Vec::new(),
            planted_txs: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(vec![e.to_string()]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        let pool = self.device_pool_per_shard.unwrap_or(self.devices_per_round);

        need(self.shards >= 1, "shards: must be >= 1");
        need(
            self.nodes_per_shard >= 3 && self.nodes_per_shard % 2 == 1,
            "nodes_per_shard: must be odd and >= 3 (b = 2a+1)",
        );
        need(self.devices_per_round >= 1, "devices_per_round: must be >= 1");
        need(
            pool >= self.devices_per_round,
            "device_pool_per_shard: must be >= devices_per_round",
        );
        need(self.batch_size >= 1, "batch_size: must be >= 1");
        need(self.local_epochs >= 1, "local_epochs: must be >= 1");
        need(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate: must be finite and positive",
        );
        need(self.rounds_per_iteration >= 1, "rounds_per_iteration: must be >= 1");
        need(self.candidate_tips >= 2, "candidate_tips: eta must be >= 2");
        need(
            self.approved_tips >= 1 && self.approved_tips < self.candidate_tips,
            "approved_tips: lambda must satisfy 1 <= lambda < candidate_tips (eta)",
        );
        if let Some(g) = self.global_tips {
            need(g >= 1, "global_tips: must be >= 1 when set");
        }
        need(
            (0.0..1.0).contains(&self.malicious_ratio),
            "malicious_ratio: must be in [0, 1)",
        );
        need(
            (0.0..=1.0).contains(&self.straggler_ratio),
            "straggler_ratio: must be in [0, 1]",
        );
        need(
            self.malicious_ratio + self.straggler_ratio <= 1.0,
            "malicious_ratio + straggler_ratio: must not exceed 1",
        );
        need(
            self.quorum_fraction > 0.0 && self.quorum_fraction <= 1.0,
            "quorum_fraction: must be in (0, 1]",
        );
        need(self.epoch_hard_cap >= 1, "epoch_hard_cap: must be >= 1");
        need(
            (0.0..=1.0).contains(&self.battery_min),
            "battery_min: must be in [0, 1]",
        );
        need(
            (0.0..=1.0).contains(&self.network_min),
            "network_min: must be in [0, 1]",
        );
        need(
            self.status_walk_step >= 0.0 && self.status_walk_step.is_finite(),
            "status_walk_step: must be finite and >= 0",
        );
        need(self.block_period >= 1, "block_period: must be >= 1");
        need(self.heartbeat_interval >= 1, "heartbeat_interval: must be >= 1");
        need(
            self.heartbeat_timeout > self.heartbeat_interval,
            "heartbeat_timeout: must exceed heartbeat_interval",
        );
        for (label, [lo, hi]) in [
            ("latency.intra", self.latency.intra),
            ("latency.to_mainchain", self.latency.to_mainchain),
            ("compute_delay", self.compute_delay),
        ] {
            need(
                lo >= 1 && hi >= lo,
                &format!("{label}: need 1 <= lo <= hi, got [{lo}, {hi}]"),
            );
        }
        need(self.selection_retry_delay >= 1, "selection_retry_delay: must be >= 1");
        if let Some(b) = self.gradient_budget {
            need(b >= 1, "gradient_budget: must be >= 1 when set");
        }

        need(self.task.model_dim >= 1, "task.model_dim: must be >= 1");
        need(self.task.samples_per_device >= 1, "task.samples_per_device: must be >= 1");
        match self.task.kind {
            TaskKindName::Regression => {
                need(
                    self.task.noise_sd.is_finite() && self.task.noise_sd >= 0.0,
                    "task.noise_sd: must be finite and >= 0",
                );
                if let TerminationRule::MetricThreshold { metric, .. } = &self.termination {
                    need(
                        *metric == MetricKind::Loss,
                        "termination.metric: a regression task reports Loss only",
                    );
                }
            }
            TaskKindName::Classification => {
                need(self.task.classes >= 2, "task.classes: must be >= 2");
                need(
                    self.task.model_dim >= self.task.classes,
                    "task.model_dim: must be >= task.classes",
                );
                if let TerminationRule::MetricThreshold { metric, .. } = &self.termination {
                    need(
                        *metric == MetricKind::Accuracy,
                        "termination.metric: a classification task reports Accuracy only",
                    );
                }
            }
        }
        if let ValidationPolicy::Fixed { value } = &self.validation {
            need(value.is_finite(), "validation.value: must be finite");
        }
        if let TerminationRule::MetricThreshold { value, .. } = &self.termination {
            need(value.is_finite(), "termination.value: must be finite");
        }
        if let TerminationRule::MaxGlobalEpochs { epochs } = &self.termination {
            need(*epochs >= 1, "termination.epochs: must be >= 1");
        }

        for (i, p) in self.planted_txs.iter().enumerate() {
            need(
                p.params.len() == self.model_len(),
                &format!(
                    "planted_txs[{i}].params: dimension {} does not match the model dimension {}",
                    p.params.len(),
                    self.model_len()
                ),
            );
            need(
                p.params.iter().all(|v| v.is_finite()),
                &format!("planted_txs[{i}].params: values must be finite"),
            );
            need(!p.sender.is_empty(), &format!("planted_txs[{i}].sender: must be nonempty"));
        }
        for (i, f) in self.faults.iter().enumerate() {
            need(
                f.shard < self.shards,
                &format!("faults[{i}].shard: {} out of range (shards = {})", f.shard, self.shards),
            );
            need(
                f.node < self.nodes_per_shard,
                &format!(
                    "faults[{i}].node: {} out of range (nodes_per_shard = {})",
                    f.node, self.nodes_per_shard
                ),
            );
        }
        drop(need);

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errs))
        }
    }

    /// Parameter-vector length implied by the task (classification models
    /// hold one weight row per class).
    pub fn model_len(&self) -> usize {
        match self.task.kind {
            TaskKindName::Regression => self.task.model_dim,
            TaskKindName::Classification => self.task.model_dim * self.task.classes,
        }
    }
}

/// Everything a run needs, with all derived defaults filled in.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub cfg: ScenarioConfig,
    pub task: GeneratedTask,
    /// One profile per device, id-indexed; shard s owns the contiguous
    /// slice [s * pool_per_shard, (s+1) * pool_per_shard).
    pub profiles: Vec<DeviceProfile>,
    pub behaviors: Vec<Behavior>,
    pub pool_per_shard: usize,
    pub lambda_g: u32,
    pub freshness_ticks: Option<u64>,
    pub round_timeout: u64,
    pub straggler_extra: u64,
    pub eval_period: u64,
    pub iteration_estimate: u64,
    pub t_max: u64,
}

impl ResolvedScenario {
    pub fn shard_of(&self, device_id: u32) -> usize {
        device_id as usize / self.pool_per_shard
    }

    pub fn shard_device_ids(&self, shard: usize) -> std::ops::Range<u32> {
        let lo = (shard * self.pool_per_shard) as u32;
        lo..lo + self.pool_per_shard as u32
    }
}

pub fn resolve(cfg: &ScenarioConfig) -> Result<ResolvedScenario, ConfigError> {
    cfg.check()?;
    let cfg = cfg.clone();
    let pool = cfg.device_pool_per_shard.unwrap_or(cfg.devices_per_round);
    let n_devices = cfg.shards * pool;
    let factory = RngFactory::new(cfg.seed);

    let task_seed = factory.stream("taskgen", 0, 0).gen::<u64>();
    let mut task = match cfg.task.kind {
        TaskKindName::Regression => generate_synthetic_regression(
            task_seed,
            n_devices,
            cfg.task.samples_per_device,
            cfg.task.model_dim,
            cfg.task.noise_sd,
        ),
        TaskKindName::Classification => generate_synthetic_classification(
            task_seed,
            n_devices,
            cfg.task.samples_per_device,
            cfg.task.model_dim,
            cfg.task.classes,
            cfg.task.partition,
        ),
    }
    .map_err(|e| ConfigError(vec![format!("task: {e}")]))?;

    // The generator fills in plain defaults; the scenario's protocol knobs
    // override them.
    task.spec.task_id_root = format!("{}-task", cfg.name);
    task.spec.hp.learning_rate = cfg.learning_rate;
    task.spec.hp.local_epochs = cfg.local_epochs;
    task.spec.hp.batch_size = cfg.batch_size.min(cfg.task.samples_per_device);
    task.spec.rounds_per_iteration = cfg.rounds_per_iteration;
    task.spec.candidate_tips = cfg.candidate_tips;
    task.spec.approved_tips = cfg.approved_tips;
    task.spec.a_tau_policy = cfg.validation;
    task.spec.termination = cfg.termination;
    task.spec.quorum_fraction = cfg.quorum_fraction;

    let mut profiles = Vec::with_capacity(n_devices);
    for d in 0..n_devices as u32 {
        let mut rng = factory.stream("profile", d as u64, 0);
        let battery = rng.gen_range(0.6..1.0);
        let network_quality = rng.gen_range(0.6..1.0);
        let compute_delay = rng.gen_range(cfg.compute_delay[0]..=cfg.compute_delay[1]);
        profiles.push(DeviceProfile {
            device_id: d,
            dataset: task.plan.assignments[d as usize].clone(),
            battery,
            network_quality,
            willing: true,
            compute_delay,
        });
    }

    // Behaviors per shard slice: the highest ids are malicious, the ids
    // just below them straggle, the rest are honest. Counts are rounded
    // per shard so every shard carries the configured mix.
    let n_mal = ((cfg.malicious_ratio * pool as f64).round() as usize).min(pool);
    let n_str = ((cfg.straggler_ratio * pool as f64).round() as usize).min(pool - n_mal);
    let mut compute_sorted: Vec<u64> = profiles.iter().map(|p| p.compute_delay).collect();
    compute_sorted.sort_unstable();
    let median_compute = compute_sorted[compute_sorted.len() / 2];
    let honest_compute = cfg.local_epochs as u64 * median_compute;
    let round_timeout = cfg
        .round_timeout
        .unwrap_or(3 * honest_compute + 2 * cfg.latency.intra[1] + 2);
    let straggler_extra = cfg.straggler_extra_delay.unwrap_or(round_timeout + 1);

    let mut behaviors = vec![Behavior::Honest; n_devices];
    for s in 0..cfg.shards {
        let base = s * pool;
        for k in 0..n_mal {
            behaviors[base + pool - 1 - k] = Behavior::Malicious { attack: cfg.attack };
        }
        for k in 0..n_str {
            behaviors[base + pool - 1 - n_mal - k] =
                Behavior::Straggler { extra_delay: straggler_extra };
        }
    }

    let mean_intra = (cfg.latency.intra[0] + cfg.latency.intra[1]).div_ceil(2);
    let mean_main = (cfg.latency.to_mainchain[0] + cfg.latency.to_mainchain[1]).div_ceil(2);
    let iteration_estimate = cfg.rounds_per_iteration as u64 * (honest_compute + 2 * mean_intra + 2)
        + 2 * mean_main
        + 2;
    let eval_period = cfg.eval_period.unwrap_or(iteration_estimate.max(1));
    let freshness_ticks = match cfg.freshness {
        Freshness::Ticks(t) => Some(t.max(1)),
        Freshness::Mode(FreshnessMode::Unlimited) => None,
        Freshness::Mode(FreshnessMode::Auto) => Some(4 * iteration_estimate.max(1)),
    };
    let cap_epochs = match cfg.termination {
        TerminationRule::MaxGlobalEpochs { epochs } => epochs.min(cfg.epoch_hard_cap),
        _ => cfg.epoch_hard_cap,
    };
    let t_max = cfg.t_max.unwrap_or_else(|| {
        (cap_epochs as u64 + 10)
            .saturating_mul(iteration_estimate.max(1))
            .saturating_mul(6)
            .saturating_add(10_000)
    });

    let lambda_g = cfg.global_tips.unwrap_or(cfg.approved_tips);
    Ok(ResolvedScenario {
        cfg,
        task,
        profiles,
        behaviors,
        pool_per_shard: pool,
        lambda_g,
        freshness_ticks,
        round_timeout,
        straggler_extra,
        eval_period,
        iteration_estimate,
        t_max,
    })
}
