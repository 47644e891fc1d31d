//! Trainable prediction heads over frozen embeddings.
//!
//! Two architectures share one flat parameter layout:
//!
//! * `Linear`: `W (out×in)`, `b (out)`
//! * `Mlp1`: `W1 (hidden×in)`, `b1 (hidden)`, `W2 (out×hidden)`, `b2 (out)`,
//!   with `tanh` on the hidden layer
//!
//! Classification heads end in a softmax; regression heads emit one
//! unclamped scalar during training and a `[0, 1]`-clamped value at
//! evaluation time.

mod checkpoint;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{TaskKind, Targets};
use crate::embedding::LabeledSet;

pub use checkpoint::{load_head, read_head, save_head, write_head, CheckpointError, HEAD_MAGIC};
pub use train::{train_head, OptimizerKind, TrainConfig, TrainHistory};

/// Lower bound applied to `ln p` in the cross-entropy.
pub const LOG_CLAMP: f64 = -30.0;

#[derive(Debug, Error, PartialEq)]
pub enum HeadError {
    #[error("input has dim {actual}, head expects {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("head dims must be at least 1 (in={in_dim}, out={out_dim}, hidden={hidden})")]
    DimZero {
        in_dim: usize,
        out_dim: usize,
        hidden: usize,
    },
    #[error("regression heads have out_dim 1, got {0}")]
    RegressionOutDim(usize),
    #[error("classification heads need out_dim >= 2, got {0}")]
    ClassificationOutDim(usize),
    #[error("targets are {actual:?} but head is {expected:?}")]
    TaskKindMismatch { expected: TaskKind, actual: TaskKind },
    #[error("class label {label} out of range for {out_dim} outputs")]
    LabelOutOfRange { label: usize, out_dim: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    Linear,
    Mlp1 { hidden: usize },
}

impl HeadKind {
    fn hidden(self) -> usize {
        match self {
            HeadKind::Linear => 0,
            HeadKind::Mlp1 { hidden } => hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Mse,
}

impl MetricKind {
    pub fn for_task(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Classification => MetricKind::Accuracy,
            TaskKind::Regression => MetricKind::Mse,
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::Accuracy)
    }
}

/// A metric value tagged with its kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    pub value: f64,
}

impl Metric {
    pub fn accuracy(value: f64) -> Self {
        Self {
            kind: MetricKind::Accuracy,
            value,
        }
    }

    pub fn mse(value: f64) -> Self {
        Self {
            kind: MetricKind::Mse,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    kind: HeadKind,
    in_dim: usize,
    out_dim: usize,
    task_kind: TaskKind,
    params: Vec<f64>,
}

/// Offsets of each block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

impl Head {
    /// Glorot-uniform weights, zero biases; deterministic in `seed`.
    pub fn init(
        kind: HeadKind,
        in_dim: usize,
        out_dim: usize,
        task_kind: TaskKind,
        seed: u64,
    ) -> Result<Self, HeadError> {
        if in_dim == 0 || out_dim == 0 || matches!(kind, HeadKind::Mlp1 { hidden: 0 }) {
            return Err(HeadError::DimZero {
                in_dim,
                out_dim,
                hidden: kind.hidden(),
            });
        }
        match task_kind {
            TaskKind::Regression if out_dim != 1 => return Err(HeadError::RegressionOutDim(out_dim)),
            TaskKind::Classification if out_dim < 2 => {
                return Err(HeadError::ClassificationOutDim(out_dim))
            }
            _ => {}
        }
        let mut head = Self {
            kind,
            in_dim,
            out_dim,
            task_kind,
            params: Vec::new(),
        };
        let layout = head.layout();
        head.params = vec![0.0; layout.end];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut head.params[range] {
                // f32-representable so checkpoints round-trip exactly.
                *p = f64::from(rng.random_range(-limit..limit) as f32);
            }
        };
        match kind {
            HeadKind::Linear => fill(layout.w1..layout.b1, in_dim, out_dim),
            HeadKind::Mlp1 { hidden } => {
                fill(layout.w1..layout.b1, in_dim, hidden);
                fill(layout.w2..layout.b2, hidden, out_dim);
            }
        }
        Ok(head)
    }

    pub(crate) fn from_parts(
        kind: HeadKind,
        in_dim: usize,
        out_dim: usize,
        task_kind: TaskKind,
        params: Vec<f64>,
    ) -> Self {
        let head = Self {
            kind,
            in_dim,
            out_dim,
            task_kind,
            params,
        };
        assert_eq!(head.params.len(), head.layout().end, "parameter count");
        head
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Number of leading parameters (`W1`, `b1`) that form the hidden layer
    /// of an `Mlp1` head; zero for linear heads.
    pub fn trunk_len(&self) -> usize {
        match self.kind {
            HeadKind::Linear => 0,
            HeadKind::Mlp1 { .. } => self.layout().w2,
        }
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn quantize(&mut self) {
        for p in &mut self.params {
            *p = f64::from(*p as f32);
        }
    }

    fn layout(&self) -> Layout {
        let (i, o) = (self.in_dim, self.out_dim);
        match self.kind {
            HeadKind::Linear => Layout {
                w1: 0,
                b1: o * i,
                w2: o * i + o,
                b2: o * i + o,
                end: o * i + o,
            },
            HeadKind::Mlp1 { hidden: h } => {
                let w2 = h * i + h;
                Layout {
                    w1: 0,
                    b1: h * i,
                    w2,
                    b2: w2 + o * h,
                    end: w2 + o * h + o,
                }
            }
        }
    }

    /// True for every index holding a weight (penalized by L2), false for biases.
    fn is_weight(&self, idx: usize) -> bool {
        let l = self.layout();
        match self.kind {
            HeadKind::Linear => idx < l.b1,
            HeadKind::Mlp1 { .. } => idx < l.b1 || (l.w2..l.b2).contains(&idx),
        }
    }

    /// Pre-softmax logits (classification) or the raw scalar (regression),
    /// plus hidden activations for `Mlp1`.
    fn raw(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout();
        let p = &self.params;
        match self.kind {
            HeadKind::Linear => (affine(&p[l.w1..l.b1], &p[l.b1..l.end], x), Vec::new()),
            HeadKind::Mlp1 { .. } => {
                let mut h = affine(&p[l.w1..l.b1], &p[l.b1..l.w2], x);
                h.iter_mut().for_each(|v| *v = v.tanh());
                let z = affine(&p[l.w2..l.b2], &p[l.b2..l.end], &h);
                (z, h)
            }
        }
    }

    /// Training-time output: probabilities, or the unclamped regression value.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, HeadError> {
        self.check_dim(x.len())?;
        let (z, _) = self.raw(x);
        Ok(match self.task_kind {
            TaskKind::Classification => softmax(&z),
            TaskKind::Regression => z,
        })
    }

    /// Evaluation-time output: probabilities, or the regression value clamped to `[0, 1]`.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, HeadError> {
        let mut out = self.forward(x)?;
        if self.task_kind == TaskKind::Regression {
            out[0] = out[0].clamp(0.0, 1.0);
        }
        Ok(out)
    }

    pub fn predict_set(&self, set: &LabeledSet) -> Result<Vec<Vec<f64>>, HeadError> {
        self.check_dim(set.dim)?;
        (0..set.len()).map(|i| self.predict(set.row(i))).collect()
    }

    fn check_dim(&self, actual: usize) -> Result<(), HeadError> {
        if actual != self.in_dim {
            return Err(HeadError::DimMismatch {
                expected: self.in_dim,
                actual,
            });
        }
        Ok(())
    }

    fn check_set(&self, set: &LabeledSet) -> Result<(), HeadError> {
        self.check_dim(set.dim)?;
        let actual = set.targets.kind();
        if actual != self.task_kind {
            return Err(HeadError::TaskKindMismatch {
                expected: self.task_kind,
                actual,
            });
        }
        if let Targets::Classes(c) = &set.targets {
            if let Some(&label) = c.iter().find(|&&c| c >= self.out_dim) {
                return Err(HeadError::LabelOutOfRange {
                    label,
                    out_dim: self.out_dim,
                });
            }
        }
        Ok(())
    }

    fn l2_term(&self, l2: f64) -> f64 {
        if l2 == 0.0 {
            return 0.0;
        }
        let sq: f64 = (0..self.params.len())
            .filter(|&i| self.is_weight(i))
            .map(|i| self.params[i] * self.params[i])
            .sum();
        l2 * sq
    }

    /// Mean loss over `batch` (row indices into `set`) plus `l2·‖weights‖²`.
    ///
    /// MSE for regression, cross-entropy with `ln p` clamped at
    /// [`LOG_CLAMP`] for classification.
    pub fn loss(&self, set: &LabeledSet, batch: &[usize], l2: f64) -> Result<f64, HeadError> {
        if batch.is_empty() {
            return Err(HeadError::EmptyBatch);
        }
        self.check_set(set)?;
        let total: f64 = batch
            .iter()
            .map(|&i| self.example_loss(set, i).0)
            .sum();
        Ok(total / batch.len() as f64 + self.l2_term(l2))
    }

    /// Per-example loss and `dloss/dz` with respect to the raw outputs.
    fn example_loss(&self, set: &LabeledSet, i: usize) -> (f64, Vec<f64>, Vec<f64>) {
        let x = set.row(i);
        let (z, h) = self.raw(x);
        match &set.targets {
            Targets::Values(y) => {
                let r = z[0] - y[i];
                (r * r, vec![2.0 * r], h)
            }
            Targets::Classes(c) => {
                let y = c[i];
                let lse = log_sum_exp(&z);
                let logp = z[y] - lse;
                if logp < LOG_CLAMP {
                    (-LOG_CLAMP, vec![0.0; z.len()], h)
                } else {
                    let mut dz: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
                    dz[y] -= 1.0;
                    (-logp, dz, h)
                }
            }
        }
    }

    /// Analytic gradient of [`Head::loss`], in the flat parameter layout.
    pub fn gradient(&self, set: &LabeledSet, batch: &[usize], l2: f64) -> Result<Vec<f64>, HeadError> {
        self.loss_and_gradient(set, batch, l2).map(|(_, g)| g)
    }

    pub fn loss_and_gradient(
        &self,
        set: &LabeledSet,
        batch: &[usize],
        l2: f64,
    ) -> Result<(f64, Vec<f64>), HeadError> {
        if batch.is_empty() {
            return Err(HeadError::EmptyBatch);
        }
        self.check_set(set)?;
        let l = self.layout();
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        for &i in batch {
            let x = set.row(i);
            let (loss, dz, h) = self.example_loss(set, i);
            total += loss;
            match self.kind {
                HeadKind::Linear => {
                    outer_acc(&mut grad[l.w1..l.b1], &dz, x, n);
                    add_scaled(&mut grad[l.b1..l.end], &dz, n);
                }
                HeadKind::Mlp1 { hidden } => {
                    outer_acc(&mut grad[l.w2..l.b2], &dz, &h, n);
                    add_scaled(&mut grad[l.b2..l.end], &dz, n);
                    let w2 = &self.params[l.w2..l.b2];
                    let da: Vec<f64> = (0..hidden)
                        .map(|k| {
                            let dh: f64 = dz
                                .iter()
                                .enumerate()
                                .map(|(o, d)| w2[o * hidden + k] * d)
                                .sum();
                            dh * (1.0 - h[k] * h[k])
                        })
                        .collect();
                    outer_acc(&mut grad[l.w1..l.b1], &da, x, n);
                    add_scaled(&mut grad[l.b1..l.w2], &da, n);
                }
            }
        }
        if l2 != 0.0 {
            for (j, g) in grad.iter_mut().enumerate() {
                if self.is_weight(j) {
                    *g += 2.0 * l2 * self.params[j];
                }
            }
        }
        Ok((total / n + self.l2_term(l2), grad))
    }

    /// Accuracy (argmax, ties to the lowest index) or MSE on clamped predictions.
    pub fn evaluate(&self, set: &LabeledSet) -> Result<Metric, HeadError> {
        if set.is_empty() {
            return Err(HeadError::EmptyBatch);
        }
        self.check_set(set)?;
        let preds = self.predict_set(set)?;
        Ok(score(&preds, &set.targets))
    }
}

/// Scores evaluation-time predictions against targets.
pub fn score(preds: &[Vec<f64>], targets: &Targets) -> Metric {
    let n = preds.len() as f64;
    match targets {
        Targets::Classes(c) => {
            let hits = preds
                .iter()
                .zip(c)
                .filter(|(p, &y)| argmax(p) == y)
                .count();
            Metric::accuracy(hits as f64 / n)
        }
        Targets::Values(y) => {
            let sse: f64 = preds
                .iter()
                .zip(y)
                .map(|(p, t)| (p[0].clamp(0.0, 1.0) - t).powi(2))
                .sum();
            Metric::mse(sse / n)
        }
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bias)| {
            let row = &w[o * cols..(o + 1) * cols];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64], n: f64) {
    let cols = x.len();
    for (o, dv) in d.iter().enumerate() {
        if *dv == 0.0 {
            continue;
        }
        for (gj, xj) in g[o * cols..(o + 1) * cols].iter_mut().zip(x) {
            *gj += dv * xj / n;
        }
    }
}

fn add_scaled(g: &mut [f64], d: &[f64], n: f64) {
    for (gj, dv) in g.iter_mut().zip(d) {
        *gj += dv / n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(dim: usize, rows: Vec<f64>, targets: Targets) -> LabeledSet {
        let n = rows.len() / dim;
        LabeledSet {
            ids: (0..n).map(|i| i.to_string()).collect(),
            dim,
            features: rows,
            targets,
        }
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let kind = HeadKind::Mlp1 { hidden: 5 };
        let a = Head::init(kind, 4, 3, TaskKind::Classification, 11).unwrap();
        let b = Head::init(kind, 4, 3, TaskKind::Classification, 11).unwrap();
        assert_eq!(a, b);
        let l = a.layout();
        assert!(a.params[l.b1..l.w2].iter().all(|&v| v == 0.0));
        assert!(a.params[l.b2..l.end].iter().all(|&v| v == 0.0));
        let limit = (6.0f64 / 9.0).sqrt();
        assert!(a.params[l.w1..l.b1].iter().all(|v| v.abs() <= limit));
        assert_ne!(a, Head::init(kind, 4, 3, TaskKind::Classification, 12).unwrap());
    }

    #[test]
    fn linear_param_count() {
        let h = Head::init(HeadKind::Linear, 7, 3, TaskKind::Classification, 0).unwrap();
        assert_eq!(h.param_count(), 7 * 3 + 3);
        let m = Head::init(HeadKind::Mlp1 { hidden: 4 }, 7, 1, TaskKind::Regression, 0).unwrap();
        assert_eq!(m.param_count(), 7 * 4 + 4 + 4 + 1);
        assert_eq!(m.trunk_len(), 7 * 4 + 4);
    }

    #[test]
    fn init_rejects_bad_shapes() {
        assert!(Head::init(HeadKind::Linear, 0, 2, TaskKind::Classification, 0).is_err());
        assert!(Head::init(HeadKind::Linear, 2, 2, TaskKind::Regression, 0).is_err());
        assert!(Head::init(HeadKind::Linear, 2, 1, TaskKind::Classification, 0).is_err());
        assert!(Head::init(HeadKind::Mlp1 { hidden: 0 }, 2, 1, TaskKind::Regression, 0).is_err());
    }

    #[test]
    fn zero_head_is_uniform() {
        let h = Head::from_parts(HeadKind::Linear, 3, 2, TaskKind::Classification, vec![0.0; 8]);
        assert_eq!(h.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn regression_dot_product() {
        let h = Head::from_parts(HeadKind::Linear, 2, 1, TaskKind::Regression, vec![1.0, 0.0, 0.0]);
        assert_eq!(h.forward(&[0.3, 9.9]).unwrap(), vec![0.3]);
        let big = Head::from_parts(HeadKind::Linear, 2, 1, TaskKind::Regression, vec![2.0, 0.0, 0.0]);
        assert_eq!(big.forward(&[0.9, 0.0]).unwrap(), vec![1.8]);
        assert_eq!(big.predict(&[0.9, 0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn dim_mismatch() {
        let h = Head::init(HeadKind::Linear, 3, 2, TaskKind::Classification, 0).unwrap();
        assert_eq!(
            h.forward(&[1.0]),
            Err(HeadError::DimMismatch { expected: 3, actual: 1 })
        );
    }

    #[test]
    fn mse_examples() {
        // Identity-on-first-coordinate head so predictions equal inputs.
        let h = Head::from_parts(HeadKind::Linear, 1, 1, TaskKind::Regression, vec![1.0, 0.0]);
        let exact = set(1, vec![0.2, 0.7], Targets::Values(vec![0.2, 0.7]));
        assert_eq!(h.loss(&exact, &all(2), 0.0).unwrap(), 0.0);
        let off = set(1, vec![0.0, 1.0], Targets::Values(vec![1.0, 0.0]));
        assert_eq!(h.loss(&off, &all(2), 0.0).unwrap(), 1.0);
        assert_eq!(h.loss(&off, &[], 0.0), Err(HeadError::EmptyBatch));
    }

    #[test]
    fn uniform_cross_entropy_is_ln2() {
        let h = Head::from_parts(HeadKind::Linear, 2, 2, TaskKind::Classification, vec![0.0; 6]);
        let s = set(2, vec![1.0, 2.0, -1.0, 0.5], Targets::Classes(vec![0, 1]));
        let l = h.loss(&s, &all(2), 0.0).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_log_is_clamped() {
        let h = Head::from_parts(
            HeadKind::Linear,
            1,
            2,
            TaskKind::Classification,
            vec![100.0, -100.0, 0.0, 0.0],
        );
        let s = set(1, vec![1.0], Targets::Classes(vec![1]));
        assert_eq!(h.loss(&s, &[0], 0.0).unwrap(), 30.0);
        assert!(h.gradient(&s, &[0], 0.0).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn l2_penalty_covers_weights_only() {
        let h = Head::from_parts(HeadKind::Linear, 1, 1, TaskKind::Regression, vec![2.0, 5.0]);
        let s = set(1, vec![0.0], Targets::Values(vec![5.0 / 5.0]));
        // prediction = 5, target 1: residual 4 → 16, plus 0.1·2²
        let l = h.loss(&s, &[0], 0.1).unwrap();
        assert!((l - 16.4).abs() < 1e-12);
    }

    #[test]
    fn accuracy_tie_breaks_to_class_zero() {
        let h = Head::from_parts(HeadKind::Linear, 1, 2, TaskKind::Classification, vec![0.0; 4]);
        let s = set(1, vec![1.0, 2.0, 3.0, 4.0], Targets::Classes(vec![0, 1, 1, 1]));
        assert_eq!(h.evaluate(&s).unwrap(), Metric::accuracy(0.25));
    }

    #[test]
    fn perfect_classifier_and_constant_regressor() {
        let h = Head::from_parts(
            HeadKind::Linear,
            1,
            2,
            TaskKind::Classification,
            vec![-1.0, 1.0, 0.0, 0.0],
        );
        let s = set(1, vec![-1.0, 2.0, -3.0], Targets::Classes(vec![0, 1, 0]));
        assert_eq!(h.evaluate(&s).unwrap(), Metric::accuracy(1.0));

        let c = Head::from_parts(HeadKind::Linear, 1, 1, TaskKind::Regression, vec![0.0, 0.5]);
        let r = set(1, vec![0.0; 4], Targets::Values(vec![0.0, 1.0, 0.0, 1.0]));
        assert_eq!(c.evaluate(&r).unwrap(), Metric::mse(0.25));
    }

    #[test]
    fn argmax_first_maximum() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
