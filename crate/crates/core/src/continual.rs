//! Sequential-task protocol: train on an ordered stream of tasks, evaluate
//! every task after every step, and derive knowledge-transfer and
//! forgetting records from the resulting grid.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Split, TaskDataset, TaskKind};
use crate::embedding::{align, EmbeddingError, EmbeddingMatrix, LabeledSet};
use crate::heads::{train_head, Head, HeadError, HeadKind, Metric, MetricKind, TrainConfig, TrainHistory};
use crate::seeding::derive_seed;

/// Drops smaller than this are treated as arithmetic noise.
pub const FORGETTING_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ContinualError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error("task {0:?} is not loaded")]
    UnknownTask(String),
    #[error("shared head cannot cover task {task:?}: {reason}")]
    SharedHeadShapeMismatch { task: String, reason: String },
    #[error("cannot difference {a:?} against {cb:?}")]
    MetricKindMismatch { a: MetricKind, cb: MetricKind },
    #[error("knowledge transfer is defined on accuracy only, got {0:?}")]
    NotAccuracy(MetricKind),
    #[error("task {task:?}, step {step}: {source}")]
    Head {
        task: String,
        step: usize,
        #[source]
        source: HeadError,
    },
}

/// One task's aligned splits, ready for training.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub name: String,
    pub task_kind: TaskKind,
    pub num_classes: Option<usize>,
    pub train: LabeledSet,
    pub validation: LabeledSet,
    pub test: LabeledSet,
}

impl PreparedTask {
    /// Aligns every split of `dataset` against one embedding source.
    pub fn from_dataset(dataset: &TaskDataset, matrix: &EmbeddingMatrix) -> Result<Self, EmbeddingError> {
        Ok(Self {
            name: dataset.name().to_string(),
            task_kind: dataset.task_kind(),
            num_classes: dataset.num_classes(),
            train: align(dataset, Split::Train, matrix)?,
            validation: align(dataset, Split::Validation, matrix)?,
            test: align(dataset, Split::Test, matrix)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.train.dim
    }

    pub fn out_dim(&self) -> usize {
        self.num_classes.unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSequence {
    pub tasks: Vec<String>,
    pub shared_head: bool,
    pub head: HeadKind,
}

/// Metrics after each training step (row 0 is the untrained baseline) on
/// every distinct task of the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMatrix {
    sequence: Vec<String>,
    tasks: Vec<String>,
    rows: Vec<Vec<Metric>>,
}

impl EvalMatrix {
    pub fn sequence(&self) -> &[String] {
        &self.sequence
    }

    /// Column labels: distinct tasks in order of first appearance.
    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn rows(&self) -> &[Vec<Metric>] {
        &self.rows
    }

    pub fn steps(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn column(&self, task: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t == task)
    }

    pub fn cell(&self, step: usize, task: &str) -> Metric {
        let col = self
            .column(task)
            .unwrap_or_else(|| panic!("task {task:?} not in matrix"));
        self.rows[step][col]
    }

    /// The shared kind of every column, or `None` when kinds are mixed.
    pub fn metric_kind(&self) -> Option<MetricKind> {
        let first = self.rows[0].first()?.kind;
        self.rows[0].iter().all(|m| m.kind == first).then_some(first)
    }

    pub fn column_kinds(&self) -> Vec<MetricKind> {
        self.rows[0].iter().map(|m| m.kind).collect()
    }

    /// Rebuilds a matrix from stored values; used when re-reading results.
    pub fn from_values(
        sequence: Vec<String>,
        tasks: Vec<String>,
        column_kinds: &[MetricKind],
        values: &[Vec<f64>],
    ) -> Self {
        let rows = values
            .iter()
            .map(|r| {
                r.iter()
                    .zip(column_kinds)
                    .map(|(&value, &kind)| Metric { kind, value })
                    .collect()
            })
            .collect();
        Self {
            sequence,
            tasks,
            rows,
        }
    }
}

/// Outcome of [`run_sequence`]: the grid plus per-step training histories.
#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub matrix: EvalMatrix,
    pub histories: Vec<TrainHistory>,
    /// Parameter count of the trainable state (shared head, or sum of heads).
    pub param_count: usize,
}

enum HeadState {
    Fresh(HashMap<String, Head>),
    Shared(Head),
    SharedTrunk {
        trunk: Vec<f64>,
        outputs: HashMap<String, Head>,
    },
}

impl HeadState {
    fn current(&self, task: &str) -> Head {
        match self {
            HeadState::Fresh(heads) => heads[task].clone(),
            HeadState::Shared(h) => h.clone(),
            HeadState::SharedTrunk { trunk, outputs } => {
                let mut h = outputs[task].clone();
                h.params_mut()[..trunk.len()].copy_from_slice(trunk);
                h
            }
        }
    }

    fn store(&mut self, task: &str, trained: Head) {
        match self {
            HeadState::Fresh(heads) => {
                heads.insert(task.to_string(), trained);
            }
            HeadState::Shared(h) => *h = trained,
            HeadState::SharedTrunk { trunk, outputs } => {
                let n = trunk.len();
                trunk.copy_from_slice(&trained.params()[..n]);
                outputs.insert(task.to_string(), trained);
            }
        }
    }

    fn param_count(&self) -> usize {
        match self {
            HeadState::Fresh(heads) => heads.values().map(Head::param_count).sum(),
            HeadState::Shared(h) => h.param_count(),
            HeadState::SharedTrunk { trunk, outputs } => {
                trunk.len()
                    + outputs
                        .values()
                        .map(|h| h.param_count() - trunk.len())
                        .sum::<usize>()
            }
        }
    }
}

fn init_seed(base: u64, task: &str) -> u64 {
    derive_seed(base, &format!("init:{task}"))
}

fn initial_state(
    seq: &TaskSequence,
    columns: &[&PreparedTask],
    seed: u64,
) -> Result<HeadState, ContinualError> {
    let head_err = |task: &str| {
        let task = task.to_string();
        move |source| ContinualError::Head { task, step: 0, source }
    };
    let init = |t: &PreparedTask, s: u64| {
        Head::init(seq.head, t.in_dim(), t.out_dim(), t.task_kind, s).map_err(head_err(&t.name))
    };

    if !seq.shared_head {
        let mut heads = HashMap::new();
        for t in columns {
            heads.insert(t.name.clone(), init(t, init_seed(seed, &t.name))?);
        }
        return Ok(HeadState::Fresh(heads));
    }

    let first = columns[0];
    for t in &columns[1..] {
        if t.in_dim() != first.in_dim() {
            return Err(ContinualError::SharedHeadShapeMismatch {
                task: t.name.clone(),
                reason: format!("embedding dim {} != {}", t.in_dim(), first.in_dim()),
            });
        }
    }
    let uniform = columns
        .iter()
        .all(|t| t.task_kind == first.task_kind && t.out_dim() == first.out_dim());
    let shared_seed = derive_seed(seed, "init:shared");
    if uniform {
        return Ok(HeadState::Shared(init(first, shared_seed)?));
    }
    match seq.head {
        HeadKind::Mlp1 { .. } => {
            let trunk_src = init(first, shared_seed)?;
            let trunk = trunk_src.params()[..trunk_src.trunk_len()].to_vec();
            let mut outputs = HashMap::new();
            for t in columns {
                outputs.insert(t.name.clone(), init(t, init_seed(seed, &t.name))?);
            }
            Ok(HeadState::SharedTrunk { trunk, outputs })
        }
        HeadKind::Linear => {
            let odd = columns
                .iter()
                .find(|t| t.task_kind != first.task_kind || t.out_dim() != first.out_dim())
                .expect("non-uniform");
            Err(ContinualError::SharedHeadShapeMismatch {
                task: odd.name.clone(),
                reason: format!(
                    "{:?} with {} outputs vs {:?} with {}; use an mlp1 head for per-task output layers",
                    odd.task_kind,
                    odd.out_dim(),
                    first.task_kind,
                    first.out_dim()
                ),
            })
        }
    }
}

/// Runs the sequence: row 0 evaluates the untrained head(s) on every task's
/// test split; row `k` follows training on the `k`-th task.
///
/// Deterministic in `config.seed`. Initial heads depend only on the seed and
/// task names, never on sequence position.
pub fn run_sequence(
    seq: &TaskSequence,
    tasks: &HashMap<String, PreparedTask>,
    config: &TrainConfig,
) -> Result<SequenceRun, ContinualError> {
    if seq.tasks.is_empty() {
        return Err(ContinualError::EmptySequence);
    }
    let mut names: Vec<String> = Vec::new();
    for t in &seq.tasks {
        if !tasks.contains_key(t) {
            return Err(ContinualError::UnknownTask(t.clone()));
        }
        if !names.contains(t) {
            names.push(t.clone());
        }
    }
    let columns: Vec<&PreparedTask> = names.iter().map(|n| &tasks[n]).collect();
    let mut state = initial_state(seq, &columns, config.seed)?;

    let evaluate_all = |state: &HeadState, step: usize| -> Result<Vec<Metric>, ContinualError> {
        columns
            .iter()
            .map(|t| {
                state
                    .current(&t.name)
                    .evaluate(&t.test)
                    .map_err(|source| ContinualError::Head {
                        task: t.name.clone(),
                        step,
                        source,
                    })
            })
            .collect()
    };

    let mut rows = vec![evaluate_all(&state, 0)?];
    let mut histories = Vec::with_capacity(seq.tasks.len());
    for (k, name) in seq.tasks.iter().enumerate() {
        let step = k + 1;
        let task = &tasks[name];
        let start = match &state {
            HeadState::Fresh(_) => Head::init(
                seq.head,
                task.in_dim(),
                task.out_dim(),
                task.task_kind,
                init_seed(config.seed, name),
            )
            .expect("validated at init"),
            _ => state.current(name),
        };
        let step_cfg = config
            .clone()
            .with_seed(derive_seed(config.seed, &format!("train:{step}:{name}")));
        let (trained, history) = train_head(start, &task.train, &task.validation, &step_cfg)
            .map_err(|source| ContinualError::Head {
                task: name.clone(),
                step,
                source,
            })?;
        log::info!(
            "step {step}: trained on {name} ({} epochs, best {})",
            history.stopped_epoch,
            history.best_epoch
        );
        state.store(name, trained);
        histories.push(history);
        rows.push(evaluate_all(&state, step)?);
    }

    Ok(SequenceRun {
        matrix: EvalMatrix {
            sequence: seq.tasks.clone(),
            tasks: names,
            rows,
        },
        histories,
        param_count: state.param_count(),
    })
}

/// Signed accuracy delta `a − cb`; positive is transfer, negative forgetting.
pub fn knowledge_transfer(a: Metric, cb: Metric) -> Result<f64, ContinualError> {
    if a.kind != cb.kind {
        return Err(ContinualError::MetricKindMismatch { a: a.kind, cb: cb.kind });
    }
    if a.kind != MetricKind::Accuracy {
        return Err(ContinualError::NotAccuracy(a.kind));
    }
    Ok(a.value - cb.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    /// Task just trained, against the model before this step.
    InTask,
    /// Next task before training on it, against the untrained baseline.
    ZeroShot,
    /// Earlier task, against the model right after learning it.
    Retention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    /// Training step after which `A` was measured.
    pub step: usize,
    pub kind: TransferKind,
    pub model: String,
    pub task: String,
    pub baseline: String,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "CB")]
    pub cb: f64,
    pub kt: f64,
    pub is_forgetting: bool,
}

/// Label of the model evaluated on `task` after `step`.
fn model_label(seq: &[String], shared: bool, step: usize, task: &str) -> String {
    if shared {
        let mut label = "base".to_string();
        for t in &seq[..step] {
            label.push_str(" → ");
            label.push_str(t);
        }
        label
    } else if seq[..step].iter().any(|t| t == task) {
        format!("base → {task}")
    } else {
        "base".to_string()
    }
}

fn record(
    matrix: &EvalMatrix,
    shared: bool,
    kind: TransferKind,
    step: usize,
    baseline_step: usize,
    task: &str,
) -> Option<TransferRecord> {
    let a = matrix.cell(step, task);
    let cb = matrix.cell(baseline_step, task);
    let kt = knowledge_transfer(a, cb).ok()?;
    Some(TransferRecord {
        step,
        kind,
        model: model_label(&matrix.sequence, shared, step, task),
        task: task.to_string(),
        baseline: model_label(&matrix.sequence, shared, baseline_step, task),
        a: a.value,
        cb: cb.value,
        kt,
        is_forgetting: kind == TransferKind::Retention && kt < -FORGETTING_EPSILON,
    })
}

/// Retention records for every (step `k`, earlier step `j`) pair whose
/// tasks differ: `A = cell(k, t_j)`, `CB = cell(j, t_j)`.
///
/// Accuracy columns only; MSE columns are skipped.
pub fn detect_forgetting(matrix: &EvalMatrix, seq: &TaskSequence) -> Vec<TransferRecord> {
    let mut out = Vec::new();
    for k in 1..=matrix.steps() {
        for j in 1..k {
            let task = &matrix.sequence[j - 1];
            if *task == matrix.sequence[k - 1] {
                continue;
            }
            out.extend(record(matrix, seq.shared_head, TransferKind::Retention, k, j, task));
        }
    }
    out
}

/// Transfer ledger in the order a per-step table reads: for each step, the
/// in-task gain, retention on previously learned tasks, then zero-shot
/// transfer to the next task in the sequence.
pub fn transfer_ledger(matrix: &EvalMatrix, seq: &TaskSequence) -> Vec<TransferRecord> {
    let shared = seq.shared_head;
    let order = &matrix.sequence;
    let mut out = Vec::new();
    for k in 1..=matrix.steps() {
        let current = &order[k - 1];
        out.extend(record(matrix, shared, TransferKind::InTask, k, k - 1, current));

        let mut seen: Vec<&String> = Vec::new();
        for j in (1..k).rev() {
            let task = &order[j - 1];
            if task == current || seen.contains(&task) {
                continue;
            }
            seen.push(task);
            out.extend(record(matrix, shared, TransferKind::Retention, k, j, task));
        }

        if let Some(next) = order.get(k) {
            if !order[..k].contains(next) {
                out.extend(record(matrix, shared, TransferKind::ZeroShot, k, 0, next));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(seq: &[&str], tasks: &[&str], values: &[&[f64]]) -> EvalMatrix {
        let kinds = vec![MetricKind::Accuracy; tasks.len()];
        let values: Vec<Vec<f64>> = values.iter().map(|r| r.to_vec()).collect();
        EvalMatrix::from_values(
            seq.iter().map(|s| s.to_string()).collect(),
            tasks.iter().map(|s| s.to_string()).collect(),
            &kinds,
            &values,
        )
    }

    fn shared(tasks: &[&str]) -> TaskSequence {
        TaskSequence {
            tasks: tasks.iter().map(|s| s.to_string()).collect(),
            shared_head: true,
            head: HeadKind::Linear,
        }
    }

    #[test]
    fn knowledge_transfer_table_values() {
        let kt = knowledge_transfer(Metric::accuracy(0.918), Metric::accuracy(0.630)).unwrap();
        assert!((kt - 0.288).abs() < 1e-12);
        let kt = knowledge_transfer(Metric::accuracy(0.436), Metric::accuracy(0.725)).unwrap();
        assert!((kt + 0.289).abs() < 1e-12);
        assert_eq!(
            knowledge_transfer(Metric::accuracy(0.7), Metric::accuracy(0.7)).unwrap(),
            0.0
        );
    }

    #[test]
    fn knowledge_transfer_kind_errors() {
        assert!(matches!(
            knowledge_transfer(Metric::accuracy(0.5), Metric::mse(0.1)),
            Err(ContinualError::MetricKindMismatch { .. })
        ));
        assert!(matches!(
            knowledge_transfer(Metric::mse(0.5), Metric::mse(0.1)),
            Err(ContinualError::NotAccuracy(MetricKind::Mse))
        ));
    }

    #[test]
    fn forgetting_on_earlier_task() {
        // QQP then MRPC: QQP drops from 0.918 to 0.849 after learning MRPC.
        let m = matrix(
            &["QQP", "MRPC"],
            &["QQP", "MRPC"],
            &[&[0.630, 0.316], &[0.918, 0.718], &[0.849, 0.862]],
        );
        let recs = detect_forgetting(&m, &shared(&["QQP", "MRPC"]));
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!((r.step, r.task.as_str()), (2, "QQP"));
        assert!((r.kt + 0.069).abs() < 1e-12);
        assert!(r.is_forgetting);
        assert_eq!(r.model, "base → QQP → MRPC");
        assert_eq!(r.baseline, "base → QQP");
    }

    #[test]
    fn ledger_reproduces_table_layout() {
        let m = matrix(
            &["QQP", "MRPC"],
            &["QQP", "MRPC"],
            &[&[0.630, 0.316], &[0.918, 0.718], &[0.849, 0.862]],
        );
        let recs = transfer_ledger(&m, &shared(&["QQP", "MRPC"]));
        let summary: Vec<(TransferKind, &str, f64, f64)> = recs
            .iter()
            .map(|r| (r.kind, r.task.as_str(), r.a, r.cb))
            .collect();
        assert_eq!(
            summary,
            vec![
                (TransferKind::InTask, "QQP", 0.918, 0.630),
                (TransferKind::ZeroShot, "MRPC", 0.718, 0.316),
                (TransferKind::InTask, "MRPC", 0.862, 0.718),
                (TransferKind::Retention, "QQP", 0.849, 0.918),
            ]
        );
        assert_eq!(recs.iter().filter(|r| r.is_forgetting).count(), 1);
    }

    #[test]
    fn mse_columns_are_never_differenced() {
        let m = EvalMatrix::from_values(
            vec!["a".into(), "b".into()],
            vec!["a".into(), "b".into()],
            &[MetricKind::Mse, MetricKind::Accuracy],
            &[vec![0.3, 0.5], vec![0.1, 0.5], vec![0.2, 0.9]],
        );
        let seq = shared(&["a", "b"]);
        assert!(detect_forgetting(&m, &seq).is_empty());
        assert!(transfer_ledger(&m, &seq).iter().all(|r| r.task == "b"));
        assert_eq!(m.metric_kind(), None);
    }
}
