//! Model parameters, local SGD training, aggregation rules and evaluation
//! metrics. Everything here is plain `f64` math with no protocol knowledge;
//! the consensus layers treat models as opaque vectors plus these functions.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LearningError {
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid hyperparameter: {0}")]
    BadHyper(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("label mismatch: {0}")]
    LabelMismatch(&'static str),
    #[error("aggregation weight must be positive")]
    BadWeight,
}

/// Flat model parameter vector. Construction rejects non-finite entries, so
/// any `ParamVector` in circulation is safe to aggregate and evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, LearningError> {
        if values.is_empty() {
            return Err(LearningError::EmptyInput("parameter vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LearningError::NonFinite("parameter vector"));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Label {
    Real(f64),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Label,
}

/// Non-empty dataset with a uniform feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    feature_dim: usize,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self, LearningError> {
        let first = samples.first().ok_or(LearningError::EmptyInput("dataset"))?;
        let feature_dim = first.features.len();
        if feature_dim == 0 {
            return Err(LearningError::EmptyInput("feature vector"));
        }
        for s in &samples {
            if s.features.len() != feature_dim {
                return Err(LearningError::ShapeMismatch {
                    expected: feature_dim,
                    got: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(LearningError::NonFinite("features"));
            }
            if let Label::Real(y) = s.label {
                if !y.is_finite() {
                    return Err(LearningError::NonFinite("label"));
                }
            }
        }
        Ok(Self { samples, feature_dim })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub local_epochs: u32,
    pub batch_size: usize,
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), LearningError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LearningError::BadHyper(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.local_epochs < 1 {
            return Err(LearningError::BadHyper("local_epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(LearningError::BadHyper("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss families the simulator trains. `SquaredError` fits a linear model
/// `y = w . x`; `CrossEntropy` fits a multinomial logistic classifier whose
/// parameter vector packs `classes` rows of `feature_dim` weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy { classes: usize },
}

impl LossKind {
    pub fn model_dim(&self, feature_dim: usize) -> usize {
        match self {
            LossKind::SquaredError => feature_dim,
            LossKind::CrossEntropy { classes } => classes * feature_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Perplexity,
    Loss,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricKind::Accuracy => write!(f, "accuracy"),
            MetricKind::Perplexity => write!(f, "perplexity"),
            MetricKind::Loss => write!(f, "loss"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
}

impl MetricValue {
    pub fn new(kind: MetricKind, value: f64) -> Result<Self, LearningError> {
        let ok = match kind {
            MetricKind::Accuracy => (0.0..=1.0).contains(&value),
            MetricKind::Perplexity => value >= 1.0,
            MetricKind::Loss => value >= 0.0,
        };
        if !ok || !value.is_finite() {
            return Err(LearningError::NonFinite("metric value out of range"));
        }
        Ok(Self { kind, value })
    }

    /// Higher-is-better ordering key, so thresholds and tip ranking use one
    /// comparison regardless of the metric kind.
    pub fn score(&self) -> f64 {
        match self.kind {
            MetricKind::Accuracy => self.value,
            MetricKind::Perplexity | MetricKind::Loss => -self.value,
        }
    }
}

fn check_shapes(w: &ParamVector, data: &LabeledDataset, loss: &LossKind) -> Result<(), LearningError> {
    let expected = loss.model_dim(data.feature_dim());
    if w.dim() != expected {
        return Err(LearningError::ShapeMismatch { expected, got: w.dim() });
    }
    if let LossKind::CrossEntropy { classes } = loss {
        if *classes < 2 {
            return Err(LearningError::BadHyper("classes must be >= 2".into()));
        }
    }
    Ok(())
}

fn softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

fn sample_loss(w: &[f64], s: &Sample, loss: &LossKind) -> Result<f64, LearningError> {
    let d = s.features.len();
    match loss {
        LossKind::SquaredError => {
            let y = match s.label {
                Label::Real(y) => y,
                Label::Class(_) => return Err(LearningError::LabelMismatch("squared loss needs real label")),
            };
            let pred: f64 = w.iter().zip(&s.features).map(|(a, b)| a * b).sum();
            let e = pred - y;
            Ok(e * e)
        }
        LossKind::CrossEntropy { classes } => {
            let c = match s.label {
                Label::Class(c) => c,
                Label::Real(_) => return Err(LearningError::LabelMismatch("cross entropy needs class label")),
            };
            if c >= *classes {
                return Err(LearningError::LabelMismatch("class label out of range"));
            }
            let mut logits: Vec<f64> = (0..*classes)
                .map(|k| w[k * d..(k + 1) * d].iter().zip(&s.features).map(|(a, b)| a * b).sum())
                .collect();
            softmax(&mut logits);
            // Clamp away from zero so a confidently wrong model yields a large
            // finite loss instead of infinity.
            Ok(-(logits[c].max(1e-300)).ln())
        }
    }
}

/// Mean per-sample gradient over the listed indices, accumulated into `out`.
fn mean_gradient(
    w: &[f64],
    data: &LabeledDataset,
    idxs: &[usize],
    loss: &LossKind,
    out: &mut [f64],
) -> Result<(), LearningError> {
    out.iter_mut().for_each(|g| *g = 0.0);
    let inv = 1.0 / idxs.len() as f64;
    let d = data.feature_dim();
    for &i in idxs {
        let s = &data.samples()[i];
        match loss {
            LossKind::SquaredError => {
                let y = match s.label {
                    Label::Real(y) => y,
                    Label::Class(_) => return Err(LearningError::LabelMismatch("squared loss needs real label")),
                };
                let pred: f64 = w.iter().zip(&s.features).map(|(a, b)| a * b).sum();
                let scale = 2.0 * (pred - y) * inv;
                for (g, x) in out.iter_mut().zip(&s.features) {
                    *g += scale * x;
                }
            }
            LossKind::CrossEntropy { classes } => {
                let c = match s.label {
                    Label::Class(c) => c,
                    Label::Real(_) => return Err(LearningError::LabelMismatch("cross entropy needs class label")),
                };
                let mut logits: Vec<f64> = (0..*classes)
                    .map(|k| w[k * d..(k + 1) * d].iter().zip(&s.features).map(|(a, b)| a * b).sum())
                    .collect();
                softmax(&mut logits);
                for k in 0..*classes {
                    let coeff = (logits[k] - if k == c { 1.0 } else { 0.0 }) * inv;
                    for (j, x) in s.features.iter().enumerate() {
                        out[k * d + j] += coeff * x;
                    }
                }
            }
        }
    }
    Ok(())
}

fn step_indices(
    w: &mut Vec<f64>,
    data: &LabeledDataset,
    idxs: &[usize],
    mu: f64,
    loss: &LossKind,
    grad: &mut [f64],
) -> Result<(), LearningError> {
    mean_gradient(w, data, idxs, loss, grad)?;
    for (wi, gi) in w.iter_mut().zip(grad.iter()) {
        *wi -= mu * gi;
        if !wi.is_finite() {
            return Err(LearningError::NonFinite("sgd update"));
        }
    }
    Ok(())
}

/// One SGD step on a mini-batch: `w - mu * grad(mean batch loss)`.
/// Returns the updated parameters and the batch loss at the *input* `w`.
pub fn sgd_step(
    w: &ParamVector,
    batch: &LabeledDataset,
    mu: f64,
    loss: &LossKind,
) -> Result<(ParamVector, f64), LearningError> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(LearningError::BadHyper(format!("step size must be positive, got {mu}")));
    }
    check_shapes(w, batch, loss)?;
    let mut before = 0.0;
    for s in batch.samples() {
        before += sample_loss(w.values(), s, loss)?;
    }
    before /= batch.len() as f64;

    let idxs: Vec<usize> = (0..batch.len()).collect();
    let mut next = w.values().to_vec();
    let mut grad = vec![0.0; w.dim()];
    step_indices(&mut next, batch, &idxs, mu, loss, &mut grad)?;
    Ok((ParamVector(next), before))
}

/// `local_epochs` full passes of mini-batch SGD with a fresh shuffle per
/// pass. The final short batch of a pass is trained, not dropped. All
/// randomness comes from `rng`, so a fixed seed fixes the result.
pub fn local_train(
    w0: &ParamVector,
    data: &LabeledDataset,
    hp: &HyperParams,
    loss: &LossKind,
    rng: &mut impl Rng,
) -> Result<ParamVector, LearningError> {
    hp.validate()?;
    if hp.batch_size > data.len() {
        return Err(LearningError::BadHyper(format!(
            "batch_size {} exceeds dataset size {}",
            hp.batch_size,
            data.len()
        )));
    }
    check_shapes(w0, data, loss)?;

    let mut w = w0.values().to_vec();
    let mut grad = vec![0.0; w0.dim()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..hp.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hp.batch_size) {
            step_indices(&mut w, data, chunk, hp.learning_rate, loss, &mut grad)?;
        }
    }
    Ok(ParamVector(w))
}

/// Dataset-size weighted mean of models: `sum |D_j| w_j / sum |D_j|`.
pub fn weighted_aggregate(models: &[(ParamVector, u64)]) -> Result<ParamVector, LearningError> {
    let (first, _) = models.first().ok_or(LearningError::EmptyInput("aggregation"))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    let mut total = 0.0f64;
    for (m, weight) in models {
        if m.dim() != dim {
            return Err(LearningError::ShapeMismatch { expected: dim, got: m.dim() });
        }
        if *weight == 0 {
            return Err(LearningError::BadWeight);
        }
        let wf = *weight as f64;
        total += wf;
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += wf * v;
        }
    }
    for a in acc.iter_mut() {
        *a /= total;
        if !a.is_finite() {
            return Err(LearningError::NonFinite("weighted aggregate"));
        }
    }
    Ok(ParamVector(acc))
}

/// Unweighted mean of models.
pub fn uniform_aggregate(models: &[ParamVector]) -> Result<ParamVector, LearningError> {
    let first = models.first().ok_or(LearningError::EmptyInput("aggregation"))?;
    let dim = first.dim();
    let inv = 1.0 / models.len() as f64;
    let mut acc = vec![0.0; dim];
    for m in models {
        if m.dim() != dim {
            return Err(LearningError::ShapeMismatch { expected: dim, got: m.dim() });
        }
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a *= inv;
        if !a.is_finite() {
            return Err(LearningError::NonFinite("uniform aggregate"));
        }
    }
    Ok(ParamVector(acc))
}

/// Mean per-sample loss of `w` over `data`.
pub fn evaluate_loss(
    w: &ParamVector,
    data: &LabeledDataset,
    loss: &LossKind,
) -> Result<MetricValue, LearningError> {
    check_shapes(w, data, loss)?;
    let mut total = 0.0;
    for s in data.samples() {
        total += sample_loss(w.values(), s, loss)?;
    }
    let mean = total / data.len() as f64;
    if !mean.is_finite() {
        return Err(LearningError::NonFinite("loss"));
    }
    MetricValue::new(MetricKind::Loss, mean.max(0.0))
}

/// Exact-match classification accuracy: fraction of samples whose argmax
/// logit equals the label. The class count is inferred from the parameter
/// and feature dimensions.
pub fn accuracy(w: &ParamVector, test: &LabeledDataset) -> Result<MetricValue, LearningError> {
    let d = test.feature_dim();
    if w.dim() % d != 0 || w.dim() / d < 2 {
        return Err(LearningError::LabelMismatch("parameter vector is not a classifier for this data"));
    }
    let classes = w.dim() / d;
    let mut hits = 0usize;
    for s in test.samples() {
        let c = match s.label {
            Label::Class(c) => c,
            Label::Real(_) => return Err(LearningError::LabelMismatch("accuracy needs class labels")),
        };
        let mut best = 0usize;
        let mut best_z = f64::NEG_INFINITY;
        for k in 0..classes {
            let z: f64 = w.values()[k * d..(k + 1) * d]
                .iter()
                .zip(&s.features)
                .map(|(a, b)| a * b)
                .sum();
            if z > best_z {
                best_z = z;
                best = k;
            }
        }
        if best == c {
            hits += 1;
        }
    }
    MetricValue::new(MetricKind::Accuracy, hits as f64 / test.len() as f64)
}

/// Perplexity of a discrete distribution: `2^H` with `H = -sum p log2 p`.
/// The input must be non-negative and sum to 1 within 1e-9.
pub fn perplexity(dist: &[f64]) -> Result<MetricValue, LearningError> {
    if dist.is_empty() {
        return Err(LearningError::EmptyInput("distribution"));
    }
    let mut sum = 0.0;
    for &p in dist {
        if !p.is_finite() || p < 0.0 {
            return Err(LearningError::InvalidDistribution(format!("bad probability {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(LearningError::InvalidDistribution(format!("probabilities sum to {sum}, not 1")));
    }
    let entropy: f64 = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    MetricValue::new(MetricKind::Perplexity, 2f64.powf(entropy).max(1.0))
}

/// Asynchronous-baseline update: equal halves of the current global model
/// and the arriving local model.
pub fn asynfl_update(global: &ParamVector, local: &ParamVector) -> Result<ParamVector, LearningError> {
    if global.dim() != local.dim() {
        return Err(LearningError::ShapeMismatch { expected: global.dim(), got: local.dim() });
    }
    let values = global
        .values()
        .iter()
        .zip(local.values())
        .map(|(g, l)| 0.5 * g + 0.5 * l)
        .collect();
    ParamVector::new(values)
}

/// Headline metric for a task: accuracy for classifiers, loss otherwise.
pub fn primary_metric(
    w: &ParamVector,
    test: &LabeledDataset,
    loss: &LossKind,
) -> Result<MetricValue, LearningError> {
    match loss {
        LossKind::CrossEntropy { .. } => accuracy(w, test),
        LossKind::SquaredError => evaluate_loss(w, test, loss),
    }
}
