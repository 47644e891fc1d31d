//! Ensemble strategies over member heads.
//!
//! `naive` and `weighted` combine member predictions; `llm` and `ki` train a
//! fresh head over segment-normalized concatenations of member embeddings
//! plus an auxiliary embedding or a pooled knowledge vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{TaskKind, Targets};
use crate::embedding::LabeledSet;
use crate::heads::{score, train_head, Head, HeadError, HeadKind, Metric, TrainConfig, TrainHistory, LOG_CLAMP};

/// Iterations of projected gradient descent for simplex fits.
pub const PGD_ITERATIONS: usize = 1000;
/// Ridge added to the Gram diagonal for unconstrained fits.
pub const RIDGE: f64 = 1e-8;
const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    Weighted,
    Llm,
    Ki,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Naive, Strategy::Weighted, Strategy::Llm, Strategy::Ki];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Weighted => "weighted",
            Strategy::Llm => "llm",
            Strategy::Ki => "ki",
        }
    }

    pub fn is_fusion(self) -> bool {
        matches!(self, Strategy::Llm | Strategy::Ki)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightConstraint {
    #[default]
    Simplex,
    Unconstrained,
}

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble has no members")]
    EmptyMemberList,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("unconstrained weights are only supported for regression")]
    UnconstrainedClassification,
    #[error("fitting split is empty")]
    EmptyFittingSplit,
    #[error(transparent)]
    Head(#[from] HeadError),
}

type Result<T> = std::result::Result<T, EnsembleError>;

/// Fitted per-member weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub weights: Vec<f64>,
    pub constraint: WeightConstraint,
    /// Set when all members predicted identically and uniform weights were returned.
    pub degenerate: bool,
    /// Fitting objective (MSE or cross-entropy) at the returned weights.
    pub objective: f64,
}

impl EnsembleWeights {
    pub fn uniform(m: usize) -> Self {
        Self {
            weights: vec![1.0 / m as f64; m],
            constraint: WeightConstraint::Simplex,
            degenerate: false,
            objective: f64::NAN,
        }
    }
}

fn check_members<T: AsRef<[f64]>>(members: &[T]) -> Result<usize> {
    let first = members.first().ok_or(EnsembleError::EmptyMemberList)?.as_ref().len();
    if let Some((i, m)) = members.iter().enumerate().find(|(_, m)| m.as_ref().len() != first) {
        return Err(EnsembleError::ShapeMismatch(format!(
            "member {i} has {} outputs, member 0 has {first}",
            m.as_ref().len()
        )));
    }
    Ok(first)
}

fn renormalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// Unweighted mean of one example's member predictions.
pub fn naive_combine<T: AsRef<[f64]>>(members: &[T], task: TaskKind) -> Result<Vec<f64>> {
    let width = check_members(members)?;
    let mut out = vec![0.0; width];
    for m in members {
        for (o, p) in out.iter_mut().zip(m.as_ref()) {
            *o += p;
        }
    }
    let n = members.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    if task == TaskKind::Classification {
        renormalize(&mut out);
    }
    Ok(out)
}

/// Weighted sum of one example's member predictions, folded in member order.
pub fn weighted_combine<T: AsRef<[f64]>>(members: &[T], weights: &[f64], task: TaskKind) -> Result<Vec<f64>> {
    let width = check_members(members)?;
    if weights.len() != members.len() {
        return Err(EnsembleError::ShapeMismatch(format!(
            "{} weights for {} members",
            weights.len(),
            members.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(EnsembleError::InvalidWeights("non-finite weight".into()));
    }
    let mut out = vec![0.0; width];
    for (m, w) in members.iter().zip(weights) {
        for (o, p) in out.iter_mut().zip(m.as_ref()) {
            *o += w * p;
        }
    }
    if task == TaskKind::Classification {
        renormalize(&mut out);
    }
    Ok(out)
}

/// Member-major predictions (`preds[member][example]`) combined per example.
pub fn combine_predictions(
    preds: &[Vec<Vec<f64>>],
    weights: Option<&[f64]>,
    task: TaskKind,
) -> Result<Vec<Vec<f64>>> {
    let n = check_examples(preds)?;
    (0..n)
        .map(|i| {
            let rows: Vec<&[f64]> = preds.iter().map(|m| m[i].as_slice()).collect();
            match weights {
                Some(w) => weighted_combine(&rows, w, task),
                None => naive_combine(&rows, task),
            }
        })
        .collect()
}

fn check_examples(preds: &[Vec<Vec<f64>>]) -> Result<usize> {
    let n = preds.first().ok_or(EnsembleError::EmptyMemberList)?.len();
    if let Some(i) = preds.iter().position(|m| m.len() != n) {
        return Err(EnsembleError::ShapeMismatch(format!(
            "member {i} has {} predictions, member 0 has {n}",
            preds[i].len()
        )));
    }
    Ok(n)
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn all_identical(preds: &[Vec<Vec<f64>>]) -> bool {
    preds[1..].iter().all(|m| m == &preds[0])
}

fn regression_matrix(preds: &[Vec<Vec<f64>>]) -> Result<DMatrix<f64>> {
    let n = preds[0].len();
    let m = preds.len();
    for (j, member) in preds.iter().enumerate() {
        if let Some(row) = member.iter().find(|r| r.len() != 1) {
            return Err(EnsembleError::ShapeMismatch(format!(
                "member {j} has {} regression outputs",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(n, m, |i, j| preds[j][i][0]))
}

fn mse_objective(p: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    (p * w - y).norm_squared() / y.len() as f64
}

fn vertex(m: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[i] = 1.0;
    v
}

/// Index of the lowest objective; ties go to the lowest index.
fn best_vertex(m: usize, objective: impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    (0..m)
        .map(|i| {
            let v = vertex(m, i);
            let f = objective(&v);
            (v, f)
        })
        .fold(None::<(Vec<f64>, f64)>, |best, (v, f)| match best {
            Some((bv, bf)) if bf <= f => Some((bv, bf)),
            _ => Some((v, f)),
        })
        .expect("m >= 1")
}

fn fit_regression_simplex(preds: &[Vec<Vec<f64>>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let p = regression_matrix(preds)?;
    let y = DVector::from_column_slice(y);
    let n = y.len() as f64;
    let m = preds.len();
    let gram = p.transpose() * &p;
    let pty = p.transpose() * &y;
    // Gershgorin bound on the largest eigenvalue of the objective's Hessian.
    let lipschitz = (0..m)
        .map(|i| gram.row(i).iter().map(|g| g.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * 2.0
        / n;
    let objective = |w: &[f64]| mse_objective(&p, &y, &DVector::from_column_slice(w));
    let (start, start_f) = best_vertex(m, objective);
    if lipschitz <= 0.0 {
        return Ok((start, start_f));
    }
    let step = 0.1 / lipschitz;
    let mut w = DVector::from_vec(start);
    let (mut best_w, mut best_f) = (w.clone(), start_f);
    for _ in 0..PGD_ITERATIONS {
        let grad = (&gram * &w - &pty) * (2.0 / n);
        let moved: Vec<f64> = (&w - grad * step).iter().copied().collect();
        w = DVector::from_vec(project_to_simplex(&moved));
        let f = mse_objective(&p, &y, &w);
        if f < best_f {
            best_f = f;
            best_w.copy_from(&w);
        }
    }
    Ok((best_w.iter().copied().collect(), best_f))
}

fn fit_regression_unconstrained(preds: &[Vec<Vec<f64>>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let p = regression_matrix(preds)?;
    let y = DVector::from_column_slice(y);
    let m = preds.len();
    let gram = p.transpose() * &p + DMatrix::identity(m, m) * RIDGE;
    let rhs = p.transpose() * &y;
    let w = gram
        .cholesky()
        .ok_or_else(|| EnsembleError::InvalidWeights("Gram matrix is not positive definite".into()))?
        .solve(&rhs);
    let f = mse_objective(&p, &y, &w);
    Ok((w.iter().copied().collect(), f))
}

fn cross_entropy(preds: &[Vec<Vec<f64>>], classes: &[usize], w: &[f64]) -> f64 {
    let n = classes.len() as f64;
    classes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let q: f64 = preds.iter().zip(w).map(|(m, wj)| wj * m[i][c]).sum();
            -q.ln().max(LOG_CLAMP)
        })
        .sum::<f64>()
        / n
}

fn cross_entropy_gradient(preds: &[Vec<Vec<f64>>], classes: &[usize], w: &[f64]) -> Vec<f64> {
    let n = classes.len() as f64;
    let mut g = vec![0.0; w.len()];
    for (i, &c) in classes.iter().enumerate() {
        let q: f64 = preds.iter().zip(w).map(|(m, wj)| wj * m[i][c]).sum();
        if q.ln() <= LOG_CLAMP {
            continue;
        }
        for (gj, m) in g.iter_mut().zip(preds) {
            *gj -= m[i][c] / (q * n);
        }
    }
    g
}

fn fit_classification_simplex(preds: &[Vec<Vec<f64>>], classes: &[usize]) -> Result<(Vec<f64>, f64)> {
    for (j, member) in preds.iter().enumerate() {
        for (row, &c) in member.iter().zip(classes) {
            if c >= row.len() {
                return Err(EnsembleError::ShapeMismatch(format!(
                    "member {j} has {} class outputs, target class {c}",
                    row.len()
                )));
            }
        }
    }
    let m = preds.len();
    let objective = |w: &[f64]| cross_entropy(preds, classes, w);
    let (mut w, mut f) = best_vertex(m, objective);
    // Monotone backtracking line search along the projected gradient.
    let mut step = 1.0;
    for _ in 0..PGD_ITERATIONS {
        let g = cross_entropy_gradient(preds, classes, &w);
        let mut accepted = false;
        while step > 1e-12 {
            let candidate =
                project_to_simplex(&w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect::<Vec<_>>());
            let fc = objective(&candidate);
            if fc < f {
                w = candidate;
                f = fc;
                accepted = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((w, f))
}

/// Fits member weights on a held-out split.
///
/// Regression minimizes MSE, classification cross-entropy. Simplex fits start
/// from the best single member and never increase the objective, so the fit is
/// never worse than any member on the fitting split. All-identical members
/// yield uniform weights with `degenerate` set.
pub fn fit_weights(
    preds: &[Vec<Vec<f64>>],
    targets: &Targets,
    constraint: WeightConstraint,
) -> Result<EnsembleWeights> {
    let n = check_examples(preds)?;
    if n == 0 {
        return Err(EnsembleError::EmptyFittingSplit);
    }
    if targets.len() != n {
        return Err(EnsembleError::ShapeMismatch(format!(
            "{} targets for {n} predictions",
            targets.len()
        )));
    }
    let m = preds.len();
    let objective_at = |w: &[f64]| -> f64 {
        match targets {
            Targets::Values(y) => {
                let p = regression_matrix(preds).expect("checked");
                mse_objective(&p, &DVector::from_column_slice(y), &DVector::from_column_slice(w))
            }
            Targets::Classes(c) => cross_entropy(preds, c, w),
        }
    };
    if m > 1 && all_identical(preds) {
        if let Targets::Values(_) = targets {
            regression_matrix(preds)?;
        }
        let weights = vec![1.0 / m as f64; m];
        let objective = objective_at(&weights);
        log::warn!("all {m} ensemble members predict identically; using uniform weights");
        return Ok(EnsembleWeights {
            weights,
            constraint,
            degenerate: true,
            objective,
        });
    }
    let (weights, objective) = match (targets, constraint) {
        (Targets::Values(y), WeightConstraint::Simplex) => fit_regression_simplex(preds, y)?,
        (Targets::Values(y), WeightConstraint::Unconstrained) => fit_regression_unconstrained(preds, y)?,
        (Targets::Classes(c), WeightConstraint::Simplex) => fit_classification_simplex(preds, c)?,
        (Targets::Classes(_), WeightConstraint::Unconstrained) => {
            return Err(EnsembleError::UnconstrainedClassification)
        }
    };
    if constraint == WeightConstraint::Simplex {
        let sum: f64 = weights.iter().sum();
        debug_assert!((sum - 1.0).abs() < SIMPLEX_TOLERANCE && weights.iter().all(|w| *w >= 0.0));
    }
    Ok(EnsembleWeights {
        weights,
        constraint,
        degenerate: false,
        objective,
    })
}

/// A fused input row; `zero_extra` marks an all-zero auxiliary/knowledge segment.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRow {
    pub values: Vec<f64>,
    pub zero_extra: bool,
}

fn push_normalized(out: &mut Vec<f64>, segment: &[f64]) -> bool {
    let norm = segment.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.extend(segment.iter().map(|x| x / norm));
        false
    } else {
        out.extend(std::iter::repeat_n(0.0, segment.len()));
        true
    }
}

/// `[member_1 ‖ … ‖ member_m ‖ extra]`, each segment L2-normalized on its own.
pub fn build_fused_representation<T: AsRef<[f64]>>(members: &[T], extra: Option<&[f64]>) -> FusedRow {
    let width: usize = members.iter().map(|m| m.as_ref().len()).sum::<usize>() + extra.map_or(0, <[f64]>::len);
    let mut values = Vec::with_capacity(width);
    for m in members {
        push_normalized(&mut values, m.as_ref());
    }
    let zero_extra = extra.is_some_and(|e| push_normalized(&mut values, e));
    FusedRow { values, zero_extra }
}

/// A fused split plus the ids whose extra segment was all zero.
#[derive(Debug, Clone)]
pub struct FusedSet {
    pub set: LabeledSet,
    pub zero_extra_ids: Vec<String>,
}

/// Fuses aligned member sets row by row. `extra`, when given, holds one
/// vector per row in the members' id order.
pub fn fuse_sets(members: &[&LabeledSet], extra: Option<&[Vec<f64>]>) -> Result<FusedSet> {
    let first = *members.first().ok_or(EnsembleError::EmptyMemberList)?;
    for (j, m) in members.iter().enumerate() {
        if m.ids != first.ids {
            return Err(EnsembleError::ShapeMismatch(format!(
                "member {j} rows are not aligned with member 0"
            )));
        }
    }
    if let Some(e) = extra {
        if e.len() != first.len() {
            return Err(EnsembleError::ShapeMismatch(format!(
                "{} extra rows for {} examples",
                e.len(),
                first.len()
            )));
        }
    }
    let mut features = Vec::new();
    let mut zero_extra_ids = Vec::new();
    let mut dim = 0;
    for i in 0..first.len() {
        let rows: Vec<&[f64]> = members.iter().map(|m| m.row(i)).collect();
        let fused = build_fused_representation(&rows, extra.map(|e| e[i].as_slice()));
        if i > 0 && fused.values.len() != dim {
            return Err(EnsembleError::ShapeMismatch(format!("extra row {i} has a different width")));
        }
        dim = fused.values.len();
        if fused.zero_extra {
            zero_extra_ids.push(first.ids[i].clone());
        }
        features.extend(fused.values);
    }
    if first.is_empty() {
        dim = members.iter().map(|m| m.dim).sum::<usize>() + extra.and_then(|e| e.first()).map_or(0, Vec::len);
    }
    Ok(FusedSet {
        set: LabeledSet {
            ids: first.ids.clone(),
            dim,
            features,
            targets: first.targets.clone(),
        },
        zero_extra_ids,
    })
}

/// A fusion head trained on fused splits.
#[derive(Debug, Clone)]
pub struct FusionOutcome {
    pub head: Head,
    pub history: TrainHistory,
    pub validation_metric: Metric,
    pub test_metric: Metric,
}

/// Trains a fresh head of `kind` on fused vectors and evaluates it on test.
pub fn train_fusion_ensemble(
    kind: HeadKind,
    task: TaskKind,
    out_dim: usize,
    train: &LabeledSet,
    validation: &LabeledSet,
    test: &LabeledSet,
    config: &TrainConfig,
) -> Result<FusionOutcome> {
    let head = Head::init(kind, train.dim, out_dim, task, config.seed)?;
    let (head, history) = train_head(head, train, validation, config)?;
    let validation_metric = head.evaluate(validation)?;
    let test_metric = head.evaluate(test)?;
    Ok(FusionOutcome {
        head,
        history,
        validation_metric,
        test_metric,
    })
}

/// Metric of combined predictions against targets.
pub fn score_combined(preds: &[Vec<Vec<f64>>], weights: Option<&[f64]>, targets: &Targets) -> Result<Metric> {
    let combined = combine_predictions(preds, weights, targets.kind())?;
    Ok(score(&combined, targets))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    #[test]
    fn naive_examples() {
        let p = [0.3, 0.7];
        assert_eq!(naive_combine(&[p, p], TaskKind::Classification).unwrap(), p.to_vec());
        let r = naive_combine(&[[0.2], [0.4]], TaskKind::Regression).unwrap();
        assert!((r[0] - 0.3).abs() < 1e-15);
        let c = naive_combine(&[[0.9, 0.1], [0.5, 0.5]], TaskKind::Classification).unwrap();
        assert!((c[0] - 0.7).abs() < 1e-15 && (c[1] - 0.3).abs() < 1e-15);
        assert!(matches!(
            naive_combine::<&[f64]>(&[], TaskKind::Regression),
            Err(EnsembleError::EmptyMemberList)
        ));
        assert!(matches!(
            naive_combine(&[vec![0.1], vec![0.1, 0.2]], TaskKind::Regression),
            Err(EnsembleError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn weighted_examples() {
        let members = [[0.2, 0.8], [0.6, 0.4], [0.1, 0.9]];
        assert_eq!(
            weighted_combine(&members, &[0.0, 1.0, 0.0], TaskKind::Classification).unwrap(),
            vec![0.6, 0.4]
        );
        let r = weighted_combine(&[[0.0], [1.0]], &[0.25, 0.75], TaskKind::Regression).unwrap();
        assert_eq!(r, vec![0.75]);
        let third = 1.0 / 3.0;
        let u = weighted_combine(&members, &[third; 3], TaskKind::Classification).unwrap();
        let n = naive_combine(&members, TaskKind::Classification).unwrap();
        for (a, b) in u.iter().zip(&n) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_oracle() {
        // Normal equations: [[5,2],[2,2]] w = [3.5,2] has solution (0.5, 0.5).
        let preds = vec![reg(&[1.0, 0.0, 2.0]), reg(&[0.0, 1.0, 1.0])];
        let y = Targets::Values(vec![0.5, 0.5, 1.5]);
        let w = fit_weights(&preds, &y, WeightConstraint::Unconstrained).unwrap();
        assert!((w.weights[0] - 0.5).abs() < 1e-6 && (w.weights[1] - 0.5).abs() < 1e-6);
        assert!(w.objective < 1e-10);
    }

    #[test]
    fn single_and_identical_members() {
        let y = Targets::Values(vec![0.1, 0.9]);
        let single = fit_weights(&[reg(&[0.3, 0.4])], &y, WeightConstraint::Simplex).unwrap();
        assert_eq!(single.weights, vec![1.0]);
        let same = fit_weights(&[reg(&[0.3, 0.4]), reg(&[0.3, 0.4])], &y, WeightConstraint::Simplex).unwrap();
        assert!(same.degenerate);
        assert_eq!(same.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn simplex_fit_prefers_better_member() {
        let y = Targets::Values(vec![0.1, 0.5, 0.9]);
        let good = reg(&[0.1, 0.5, 0.9]);
        let bad = reg(&[0.9, 0.1, 0.3]);
        let w = fit_weights(&[bad, good], &y, WeightConstraint::Simplex).unwrap();
        assert!(w.weights[1] > 0.99, "{:?}", w.weights);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classification_fit() {
        let y = Targets::Classes(vec![0, 1, 1, 0]);
        let a = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4], vec![0.7, 0.3]];
        let b = vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.1, 0.9], vec![0.4, 0.6]];
        let w = fit_weights(&[a.clone(), b.clone()], &y, WeightConstraint::Simplex).unwrap();
        let fa = cross_entropy(&[a.clone(), b.clone()], &[0, 1, 1, 0], &[1.0, 0.0]);
        let fb = cross_entropy(&[a.clone(), b.clone()], &[0, 1, 1, 0], &[0.0, 1.0]);
        assert!(w.objective <= fa.min(fb));
        assert!(w.weights.iter().all(|x| *x > 0.0));
        assert!(matches!(
            fit_weights(&[a, b], &y, WeightConstraint::Unconstrained),
            Err(EnsembleError::UnconstrainedClassification)
        ));
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_to_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        assert_eq!(project_to_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_to_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn fused_shapes() {
        let f = build_fused_representation(&[[1.0; 4], [2.0; 4]], Some(&[3.0; 8]));
        assert_eq!(f.values.len(), 16);
        assert!(!f.zero_extra);
        let z = build_fused_representation(&[[3.0, 4.0]], Some(&[0.0, 0.0]));
        assert_eq!(z.values, vec![0.6, 0.8, 0.0, 0.0]);
        assert!(z.zero_extra);
        let scaled = build_fused_representation(&[[30.0, 40.0]], Some(&[0.0, 0.0]));
        assert_eq!(scaled, z);
    }

    #[test]
    fn fuse_sets_aligns_rows() {
        let a = LabeledSet {
            ids: vec!["x".into(), "y".into()],
            dim: 2,
            features: vec![3.0, 4.0, 0.0, 2.0],
            targets: Targets::Values(vec![0.1, 0.2]),
        };
        let extra = vec![vec![0.0], vec![5.0]];
        let f = fuse_sets(&[&a, &a], Some(&extra)).unwrap();
        assert_eq!(f.set.dim, 5);
        assert_eq!(f.set.row(1), &[0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(f.zero_extra_ids, vec!["x".to_string()]);
        let mut b = a.clone();
        b.ids.swap(0, 1);
        assert!(fuse_sets(&[&a, &b], None).is_err());
    }
}
