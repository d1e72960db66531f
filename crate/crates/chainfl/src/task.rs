//! Task publication types and synthetic workloads. A task fixes the model
//! family, hyperparameters, validation policy and termination rule; the
//! generators here produce seeded regression and classification workloads
//! together with a held-out test set and, for regression, a pooled oracle
//! that admits a closed-form optimum.

use crate::learning::{
    HyperParams, Label, LabeledDataset, LossKind, MetricKind, ParamVector, Sample,
};
use crate::store::{hash_bytes, ContentHash};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid task: {0}")]
    Invalid(String),
    #[error("dataset import failed at line {line}: {detail}")]
    Import { line: usize, detail: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Learning(#[from] crate::learning::LearningError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    /// Sort by label, then cut into contiguous equal groups: each device sees
    /// a narrow label slice.
    NonIidSorted,
    /// Shuffle, then cut into equal groups.
    IidRandom,
}

/// Device-indexed datasets produced by a partitioner.
#[derive(Debug, Clone)]
pub struct PartitionPlan {
    pub assignments: Vec<LabeledDataset>,
    pub scheme: PartitionScheme,
}

/// How a shard sets the acceptance threshold for incoming local models.
/// `Fixed` compares against a constant score; `BasicRoundModelMetric`
/// snapshots the metric of the round's starting model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationPolicy {
    Fixed { value: f64 },
    BasicRoundModelMetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminationRule {
    MaxGlobalEpochs { epochs: u32 },
    MetricThreshold { metric: MetricKind, value: f64 },
}

/// Task requirements as published in the genesis transaction. Serializes
/// deterministically, so the genesis payload round-trips byte-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id_root: String,
    pub model_dim: usize,
    pub init_params: ParamVector,
    pub loss_kind: LossKind,
    pub hp: HyperParams,
    pub rounds_per_iteration: u32,
    pub candidate_tips: u32,
    pub approved_tips: u32,
    pub a_tau_policy: ValidationPolicy,
    pub termination: TerminationRule,
    pub test_set_ref: ContentHash,
    pub quorum_fraction: f64,
    pub round_timeout: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), TaskError> {
        self.hp.validate().map_err(TaskError::Learning)?;
        if self.rounds_per_iteration < 1 {
            return Err(TaskError::Invalid("rounds_per_iteration must be >= 1".into()));
        }
        if self.candidate_tips < 2 {
            return Err(TaskError::Invalid("candidate_tips must be >= 2".into()));
        }
        if self.approved_tips < 1 || self.approved_tips >= self.candidate_tips {
            return Err(TaskError::Invalid(format!(
                "approved_tips must satisfy 1 <= lambda < eta, got lambda={} eta={}",
                self.approved_tips, self.candidate_tips
            )));
        }
        if !(self.quorum_fraction > 0.0 && self.quorum_fraction <= 1.0) {
            return Err(TaskError::Invalid(format!(
                "quorum_fraction must be in (0, 1], got {}",
                self.quorum_fraction
            )));
        }
        if self.init_params.dim() != self.model_dim {
            return Err(TaskError::Invalid("init_params dimension disagrees with model_dim".into()));
        }
        Ok(())
    }
}

/// Pooled design matrix and targets for the regression workload, kept so
/// tests can solve the least-squares problem directly.
#[derive(Debug, Clone)]
pub struct RegressionOracle {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub hidden: ParamVector,
}

#[derive(Debug, Clone)]
pub struct GeneratedTask {
    pub spec: TaskSpec,
    pub plan: PartitionPlan,
    pub test_set: LabeledDataset,
    pub regression_oracle: Option<RegressionOracle>,
}

/// Canonical dataset bytes (the export text), hashed into `test_set_ref`.
pub fn dataset_digest(ds: &LabeledDataset) -> ContentHash {
    let mut buf = Vec::new();
    export_dataset(ds, &mut buf).expect("in-memory export cannot fail");
    hash_bytes(&buf)
}

fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Linear-regression workload: a hidden weight vector, per-device feature
/// rows `x ~ N(0, I)` with `y = x . w* + noise`, plus a 20% held-out test
/// slice and the pooled oracle.
pub fn generate_synthetic_regression(
    seed: u64,
    n_devices: usize,
    samples_per_device: usize,
    dim: usize,
    noise_sd: f64,
) -> Result<GeneratedTask, TaskError> {
    if n_devices == 0 || samples_per_device == 0 || dim == 0 {
        return Err(TaskError::Invalid("regression task needs devices, samples and dims".into()));
    }
    if noise_sd < 0.0 || !noise_sd.is_finite() {
        return Err(TaskError::Invalid("noise_sd must be finite and non-negative".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let hidden: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();

    let draw = |rng: &mut ChaCha12Rng| {
        let x: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let mut y: f64 = x.iter().zip(&hidden).map(|(a, b)| a * b).sum();
        if noise_sd > 0.0 {
            y += noise_sd * standard_normal(rng);
        }
        Sample { features: x, label: Label::Real(y) }
    };

    let mut assignments = Vec::with_capacity(n_devices);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n_devices {
        let samples: Vec<Sample> = (0..samples_per_device).map(|_| draw(&mut rng)).collect();
        for s in &samples {
            xs.push(s.features.clone());
            if let Label::Real(y) = s.label {
                ys.push(y);
            }
        }
        assignments.push(LabeledDataset::new(samples)?);
    }
    // Test slice sized at a quarter of the training pool = 20% of the total.
    let test_n = (n_devices * samples_per_device / 4).max(dim + 1);
    let test_set = LabeledDataset::new((0..test_n).map(|_| draw(&mut rng)).collect())?;

    let hidden = ParamVector::new(hidden)?;
    let spec = TaskSpec {
        task_id_root: format!("reg-{seed}"),
        model_dim: dim,
        init_params: ParamVector::zeros(dim),
        loss_kind: LossKind::SquaredError,
        hp: HyperParams {
            learning_rate: 0.05,
            local_epochs: 5,
            batch_size: samples_per_device.min(10),
        },
        rounds_per_iteration: 1,
        candidate_tips: 3,
        approved_tips: 2,
        a_tau_policy: ValidationPolicy::BasicRoundModelMetric,
        termination: TerminationRule::MaxGlobalEpochs { epochs: 200 },
        test_set_ref: dataset_digest(&test_set),
        quorum_fraction: 2.0 / 3.0,
        round_timeout: 0,
    };
    Ok(GeneratedTask {
        spec,
        plan: PartitionPlan { assignments, scheme: PartitionScheme::IidRandom },
        test_set,
        regression_oracle: Some(RegressionOracle { xs, ys, hidden }),
    })
}

/// Classification workload: axis-aligned Gaussian blobs (class `k` centred
/// at `radius * e_k`, unit spread), balanced labels, partitioned by the
/// requested scheme. Requires `dim >= classes` so the blobs are separable
/// through the origin.
pub fn generate_synthetic_classification(
    seed: u64,
    n_devices: usize,
    samples_per_device: usize,
    dim: usize,
    classes: usize,
    scheme: PartitionScheme,
) -> Result<GeneratedTask, TaskError> {
    if n_devices == 0 || samples_per_device == 0 {
        return Err(TaskError::Invalid("classification task needs devices and samples".into()));
    }
    if classes < 2 {
        return Err(TaskError::Invalid("classification needs at least two classes".into()));
    }
    if dim < classes {
        return Err(TaskError::Invalid(format!(
            "need dim >= classes for separable blobs, got dim={dim} classes={classes}"
        )));
    }
    let radius = 4.0;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha12Rng, c: usize| {
        let mut x: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        x[c] += radius;
        Sample { features: x, label: Label::Class(c) }
    };

    let total = n_devices * samples_per_device;
    // Round-robin labels: class counts differ by at most one.
    let pool: Vec<Sample> = (0..total).map(|i| draw(&mut rng, i % classes)).collect();
    let test_n = (total / 4).max(classes);
    let test_set = LabeledDataset::new((0..test_n).map(|i| draw(&mut rng, i % classes)).collect())?;

    let plan = match scheme {
        PartitionScheme::NonIidSorted => partition_noniid(pool, n_devices)?,
        PartitionScheme::IidRandom => partition_iid(pool, n_devices, &mut rng)?,
    };

    let loss_kind = LossKind::CrossEntropy { classes };
    let model_dim = loss_kind.model_dim(dim);
    let spec = TaskSpec {
        task_id_root: format!("cls-{seed}"),
        model_dim,
        init_params: ParamVector::zeros(model_dim),
        loss_kind,
        hp: HyperParams {
            learning_rate: 0.05,
            local_epochs: 5,
            batch_size: samples_per_device.min(10),
        },
        rounds_per_iteration: 1,
        candidate_tips: 3,
        approved_tips: 2,
        a_tau_policy: ValidationPolicy::BasicRoundModelMetric,
        termination: TerminationRule::MaxGlobalEpochs { epochs: 200 },
        test_set_ref: dataset_digest(&test_set),
        quorum_fraction: 2.0 / 3.0,
        round_timeout: 0,
    };
    Ok(GeneratedTask { spec, plan, test_set, regression_oracle: None })
}

fn split_sizes(total: usize, n: usize) -> Vec<usize> {
    // Remainder is spread one extra sample per group from the front.
    let base = total / n;
    let extra = total % n;
    (0..n).map(|i| base + usize::from(i < extra)).collect()
}

fn label_key(l: &Label) -> f64 {
    match l {
        Label::Real(y) => *y,
        Label::Class(c) => *c as f64,
    }
}

/// Label-sorted contiguous split. The sort is stable, so ties keep their
/// source order and the output multiset equals the input exactly.
pub fn partition_noniid(mut pool: Vec<Sample>, n_devices: usize) -> Result<PartitionPlan, TaskError> {
    if n_devices == 0 || pool.len() < n_devices {
        return Err(TaskError::Invalid(format!(
            "cannot split {} samples across {n_devices} devices",
            pool.len()
        )));
    }
    pool.sort_by(|a, b| label_key(&a.label).total_cmp(&label_key(&b.label)));
    let mut assignments = Vec::with_capacity(n_devices);
    let mut rest = pool;
    for size in split_sizes(rest.len(), n_devices) {
        let tail = rest.split_off(size);
        assignments.push(LabeledDataset::new(rest)?);
        rest = tail;
    }
    Ok(PartitionPlan { assignments, scheme: PartitionScheme::NonIidSorted })
}

/// Shuffled split with the same group sizing as the sorted variant.
pub fn partition_iid(
    mut pool: Vec<Sample>,
    n_devices: usize,
    rng: &mut impl Rng,
) -> Result<PartitionPlan, TaskError> {
    if n_devices == 0 || pool.len() < n_devices {
        return Err(TaskError::Invalid(format!(
            "cannot split {} samples across {n_devices} devices",
            pool.len()
        )));
    }
    pool.shuffle(rng);
    let mut assignments = Vec::with_capacity(n_devices);
    let mut rest = pool;
    for size in split_sizes(rest.len(), n_devices) {
        let tail = rest.split_off(size);
        assignments.push(LabeledDataset::new(rest)?);
        rest = tail;
    }
    Ok(PartitionPlan { assignments, scheme: PartitionScheme::IidRandom })
}

/// Solves the pooled ridge-regularized normal equations
/// `(X^T X + 1e-9 I) w = X^T y` by Gaussian elimination with partial
/// pivoting. The tiny ridge keeps degenerate designs solvable.
pub fn closed_form_optimum(oracle: &RegressionOracle) -> Result<ParamVector, TaskError> {
    let n = oracle.xs.len();
    if n == 0 || n != oracle.ys.len() {
        return Err(TaskError::Invalid("oracle data is empty or inconsistent".into()));
    }
    let d = oracle.xs[0].len();
    let mut a = vec![vec![0.0f64; d]; d];
    let mut b = vec![0.0f64; d];
    for (x, y) in oracle.xs.iter().zip(&oracle.ys) {
        if x.len() != d {
            return Err(TaskError::Invalid("ragged oracle rows".into()));
        }
        for i in 0..d {
            b[i] += x[i] * y;
            for j in 0..d {
                a[i][j] += x[i] * x[j];
            }
        }
    }
    for i in 0..d {
        a[i][i] += 1e-9;
    }

    // Forward elimination with partial pivoting.
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-300 {
            return Err(TaskError::Invalid("singular normal equations".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..d {
            let f = a[row][col] / a[col][col];
            for k in col..d {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    // Back substitution.
    let mut w = vec![0.0f64; d];
    for i in (0..d).rev() {
        let mut acc = b[i];
        for j in i + 1..d {
            acc -= a[i][j] * w[j];
        }
        w[i] = acc / a[i][i];
    }
    ParamVector::new(w).map_err(TaskError::Learning)
}

/// Writes one record per line as `x1,...,xd,label`, preceded by a header
/// carrying the feature dimension and label kind. Floats print in shortest
/// round-trip form, so import reproduces the dataset bit-for-bit.
pub fn export_dataset(ds: &LabeledDataset, out: &mut impl Write) -> Result<(), TaskError> {
    let kind = match ds.samples()[0].label {
        Label::Real(_) => "real",
        Label::Class(_) => "class",
    };
    writeln!(out, "# features={} label={kind}", ds.feature_dim())?;
    for s in ds.samples() {
        let mut line = String::new();
        for x in &s.features {
            line.push_str(&format!("{x},"));
        }
        match s.label {
            Label::Real(y) => line.push_str(&format!("{y}")),
            Label::Class(c) => line.push_str(&format!("{c}")),
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn import_dataset(reader: impl BufRead) -> Result<LabeledDataset, TaskError> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or(TaskError::Import { line: 0, detail: "empty input".into() })??;
    let parts: Vec<&str> = header.trim().split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "#" {
        return Err(TaskError::Import { line: 1, detail: format!("bad header: {header}") });
    }
    let dim: usize = parts[1]
        .strip_prefix("features=")
        .and_then(|v| v.parse().ok())
        .ok_or(TaskError::Import { line: 1, detail: "bad features field".into() })?;
    let class_labels = match parts[2] {
        "label=real" => false,
        "label=class" => true,
        other => return Err(TaskError::Import { line: 1, detail: format!("bad label field: {other}") }),
    };

    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 1 {
            return Err(TaskError::Import {
                line: line_no,
                detail: format!("expected {} fields, got {}", dim + 1, fields.len()),
            });
        }
        let features = fields[..dim]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TaskError::Import { line: line_no, detail: e.to_string() })?;
        let label = if class_labels {
            Label::Class(fields[dim].parse().map_err(|e: std::num::ParseIntError| TaskError::Import {
                line: line_no,
                detail: e.to_string(),
            })?)
        } else {
            Label::Real(fields[dim].parse().map_err(|e: std::num::ParseFloatError| TaskError::Import {
                line: line_no,
                detail: e.to_string(),
            })?)
        };
        samples.push(Sample { features, label });
    }
    LabeledDataset::new(samples).map_err(TaskError::Learning)
}
