//! Experiment runner: per-model heads, then sequences, then ensembles, then
//! reports. Each finished phase is persisted to `run.json` before the next
//! one starts, so a failure keeps everything completed so far.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EnsembleSpec, ExperimentConfig, SourceKind};
use crate::continual::{run_sequence, transfer_ledger, ContinualError, PreparedTask, TaskSequence};
use crate::data::{load_jsonl, DataError, LoadOptions, TaskDataset, TaskKind};
use crate::embedding::{load_embeddings, EmbeddingError, EmbeddingMatrix, HashEncoder, LabeledSet};
use crate::ensemble::{fit_weights, fuse_sets, score_combined, train_fusion_ensemble, EnsembleError, Strategy};
use crate::heads::{load_head, save_head, train_head, CheckpointError, Head, HeadError, Metric, TrainConfig};
use crate::knowledge::{load_kb, KnowledgeBase, KnowledgeError};
use crate::reporting::{
    write_reports, write_run_json, EnsembleResult, MemberResult, MemberWeight, ModelResult, PhaseFailure,
    ReportError, RunResult, SequenceResult,
};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Heads,
    Sequences,
    Ensembles,
    Reports,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Heads, Phase::Sequences, Phase::Ensembles, Phase::Reports];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Heads => "heads",
            Phase::Sequences => "sequences",
            Phase::Ensembles => "ensembles",
            Phase::Reports => "reports",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Continual(#[from] ContinualError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Incompatible(String),
}

/// A failed phase; results of earlier phases are already on disk.
#[derive(Debug, Error)]
#[error("phase {phase} failed{}: {source}", .item.as_ref().map(|i| format!(" ({i})")).unwrap_or_default())]
pub struct ExperimentError {
    pub phase: Phase,
    /// Sequence or ensemble name when the failure is specific to one.
    pub item: Option<String>,
    #[source]
    pub source: Box<StageError>,
    pub run_dir: PathBuf,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub result: RunResult,
    pub files: Vec<PathBuf>,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    datasets: HashMap<String, TaskDataset>,
    files: HashMap<String, EmbeddingMatrix>,
    prepared: HashMap<(String, String), PreparedTask>,
    heads: HashMap<(String, String), Head>,
    kbs: HashMap<String, KnowledgeBase>,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self {
            cfg,
            datasets: HashMap::new(),
            files: HashMap::new(),
            prepared: HashMap::new(),
            heads: HashMap::new(),
            kbs: HashMap::new(),
        }
    }

    fn dataset(&mut self, name: &str) -> Result<&TaskDataset, StageError> {
        if !self.datasets.contains_key(name) {
            let d = self.cfg.dataset(name).expect("validated reference");
            log::info!("loading dataset {name} from {}", d.path.display());
            let ds = load_jsonl(
                &d.path,
                name,
                &LoadOptions {
                    task_kind: d.task_kind,
                    num_classes: d.num_classes,
                    label_scale: d.label_scale,
                },
            )?;
            self.datasets.insert(name.to_string(), ds);
        }
        Ok(&self.datasets[name])
    }

    fn prepared(&mut self, dataset: &str, source: &str) -> Result<&PreparedTask, StageError> {
        let key = (dataset.to_string(), source.to_string());
        if !self.prepared.contains_key(&key) {
            let src = self.cfg.source(source).expect("validated reference").clone();
            self.dataset(dataset)?;
            let ds = &self.datasets[dataset];
            let task = match &src.kind {
                SourceKind::Hash { dim, seed } => {
                    let m = HashEncoder::new(*dim, *seed)?.encode_dataset(source, ds)?;
                    PreparedTask::from_dataset(ds, &m)?
                }
                SourceKind::File { path } => {
                    if !self.files.contains_key(source) {
                        log::info!("loading embeddings {source} from {}", path.display());
                        self.files.insert(source.to_string(), load_embeddings(path)?);
                    }
                    PreparedTask::from_dataset(ds, &self.files[source])?
                }
            };
            self.prepared.insert(key.clone(), task);
        }
        Ok(&self.prepared[&key])
    }

    fn kb(&mut self, name: &str) -> Result<&KnowledgeBase, StageError> {
        if !self.kbs.contains_key(name) {
            let k = self.cfg.knowledge_base(name).expect("validated reference");
            self.kbs.insert(name.to_string(), load_kb(&k.labels, &k.vectors)?);
        }
        Ok(&self.kbs[name])
    }

    fn train_config(&self, label: &str) -> TrainConfig {
        self.cfg.train.clone().with_seed(derive_seed(self.cfg.seed, label))
    }
}

/// `(dataset, source)` pairs that get a standalone head, in config order.
fn model_pairs(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut push = |d: &str, s: &str| {
        let p = (d.to_string(), s.to_string());
        if !out.contains(&p) {
            out.push(p);
        }
    };
    for s in &cfg.sequences {
        for t in &s.tasks {
            push(t, &s.source);
        }
    }
    for e in &cfg.ensembles {
        for m in e.members.iter().filter(|m| m.checkpoint.is_none()) {
            push(&e.dataset, &m.source);
        }
    }
    out
}

fn heads_phase(ctx: &mut Context, run_dir: &Path, result: &mut RunResult) -> Result<(), (Option<String>, StageError)> {
    let heads_dir = run_dir.join("heads");
    std::fs::create_dir_all(&heads_dir).map_err(|source| {
        (
            None,
            StageError::Io {
                context: heads_dir.display().to_string(),
                source,
            },
        )
    })?;
    for (dataset, source) in model_pairs(ctx.cfg) {
        let item = format!("{dataset}/{source}");
        let wrap = |e: StageError| (Some(item.clone()), e);
        let label = format!("{dataset}:{source}");
        let head_kind = ctx.cfg.head;
        let train_cfg = ctx.train_config(&format!("train:head:{label}"));
        let init_seed = derive_seed(ctx.cfg.seed, &format!("init:head:{label}"));
        let task = ctx.prepared(&dataset, &source).map_err(wrap)?;
        let head = Head::init(head_kind, task.in_dim(), task.out_dim(), task.task_kind, init_seed)
            .map_err(|e| wrap(e.into()))?;
        let (head, history) =
            train_head(head, &task.train, &task.validation, &train_cfg).map_err(|e| wrap(e.into()))?;
        let validation = head.evaluate(&task.validation).map_err(|e| wrap(e.into()))?;
        let test = head.evaluate(&task.test).map_err(|e| wrap(e.into()))?;
        log::info!(
            "head {item}: {} epochs, test {:?} {:.4}",
            history.stopped_epoch,
            test.kind,
            test.value
        );
        let rel = format!("heads/{}__{}.l3hd", sanitize(&dataset), sanitize(&source));
        save_head(&head, &run_dir.join(&rel)).map_err(|e| wrap(e.into()))?;
        result.models.push(ModelResult {
            dataset: dataset.clone(),
            source: source.clone(),
            head: head_kind,
            param_count: head.param_count(),
            validation,
            test,
            checkpoint: rel,
        });
        ctx.heads.insert((dataset, source), head);
    }
    Ok(())
}

fn sequences_phase(ctx: &mut Context, result: &mut RunResult) -> Result<(), (Option<String>, StageError)> {
    for s in &ctx.cfg.sequences {
        let wrap = |e: StageError| (Some(s.name.clone()), e);
        let mut tasks = HashMap::new();
        for t in &s.tasks {
            let p = ctx.prepared(t, &s.source).map_err(wrap)?.clone();
            tasks.insert(t.clone(), p);
        }
        let seq = TaskSequence {
            tasks: s.tasks.clone(),
            shared_head: s.shared_head,
            head: s.head,
        };
        let run = run_sequence(&seq, &tasks, &ctx.train_config(&format!("sequence:{}", s.name)))
            .map_err(|e| wrap(e.into()))?;
        let transfers = transfer_ledger(&run.matrix, &seq);
        result.sequences.push(SequenceResult {
            name: s.name.clone(),
            source: s.source.clone(),
            sequence: s.tasks.clone(),
            shared_head: s.shared_head,
            head: s.head,
            tasks: run.matrix.tasks().to_vec(),
            metric_kind: run.matrix.metric_kind(),
            rows: run.matrix.rows().to_vec(),
            transfers,
            param_count: run.param_count,
        });
    }
    Ok(())
}

struct Member {
    source: String,
    head: Head,
}

fn member_head(ctx: &mut Context, spec: &EnsembleSpec, i: usize) -> Result<Member, StageError> {
    let m = &spec.members[i];
    let head = match &m.checkpoint {
        Some(path) => load_head(path)?,
        None => ctx.heads[&(spec.dataset.clone(), m.source.clone())].clone(),
    };
    let task = ctx.prepared(&spec.dataset, &m.source)?;
    if head.in_dim() != task.in_dim() || head.out_dim() != task.out_dim() || head.task_kind() != task.task_kind {
        return Err(StageError::Incompatible(format!(
            "member {i} ({}) head is {:?} {}→{}, dataset {} needs {:?} {}→{}",
            m.source,
            head.task_kind(),
            head.in_dim(),
            head.out_dim(),
            spec.dataset,
            task.task_kind,
            task.in_dim(),
            task.out_dim()
        )));
    }
    Ok(Member {
        source: m.source.clone(),
        head,
    })
}

fn extra_rows(ctx: &mut Context, spec: &EnsembleSpec, set: &LabeledSet) -> Result<Option<Vec<Vec<f64>>>, StageError> {
    match spec.strategy {
        Strategy::Llm => {
            let aux = spec.auxiliary_source.as_deref().expect("validated");
            let aux_task = ctx.prepared(&spec.dataset, aux)?;
            let all = [&aux_task.train, &aux_task.validation, &aux_task.test];
            let find = |id: &String| {
                all.iter().find_map(|s| s.ids.iter().position(|x| x == id).map(|i| s.row(i).to_vec()))
            };
            Ok(Some(set.ids.iter().map(|id| find(id).expect("aligned")).collect()))
        }
        Strategy::Ki => {
            let kb_name = spec.knowledge_base.as_deref().expect("validated");
            ctx.kb(kb_name)?;
            ctx.dataset(&spec.dataset)?;
            let kb = &ctx.kbs[kb_name];
            let ds = &ctx.datasets[&spec.dataset];
            set.ids
                .iter()
                .map(|id| {
                    let text = ds.example(id).expect("aligned").text.joined();
                    kb.knowledge_vector(&kb.link_entities(&text)).map_err(StageError::from)
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
        }
        Strategy::Naive | Strategy::Weighted => Ok(None),
    }
}

/// Member outputs as scored: regression clamped to [0, 1]. Convex combinations
/// of clamped outputs stay in range, so simplex fits are scored on exactly the
/// objective they minimize.
fn evaluation_outputs(head: &Head, set: &LabeledSet) -> Result<Vec<Vec<f64>>, HeadError> {
    let mut preds = head.predict_set(set)?;
    if head.task_kind() == TaskKind::Regression {
        preds.iter_mut().flatten().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Ok(preds)
}

fn evaluate_ensemble(ctx: &mut Context, spec: &EnsembleSpec) -> Result<EnsembleResult, StageError> {
    let members: Vec<Member> = (0..spec.members.len())
        .map(|i| member_head(ctx, spec, i))
        .collect::<Result<_, _>>()?;
    let mut member_results = Vec::new();
    let mut val_preds = Vec::new();
    let mut test_preds = Vec::new();
    for m in &members {
        let task = ctx.prepared(&spec.dataset, &m.source)?;
        val_preds.push(evaluation_outputs(&m.head, &task.validation)?);
        test_preds.push(evaluation_outputs(&m.head, &task.test)?);
        member_results.push(MemberResult {
            source: m.source.clone(),
            param_count: m.head.param_count(),
            validation: m.head.evaluate(&task.validation)?,
            test: m.head.evaluate(&task.test)?,
        });
    }
    let first = ctx.prepared(&spec.dataset, &members[0].source)?.clone();
    let member_param_count = member_results.iter().map(|m| m.param_count).sum();
    let mut out = EnsembleResult {
        name: spec.name.clone(),
        dataset: spec.dataset.clone(),
        strategy: spec.strategy,
        members: member_results,
        auxiliary_source: spec.auxiliary_source.clone(),
        knowledge_base: spec.knowledge_base.clone(),
        test: Metric::mse(f64::NAN),
        fitting: None,
        weights: None,
        degenerate_weights: false,
        member_param_count,
        fusion_param_count: 0,
        zero_extra_rows: 0,
    };
    match spec.strategy {
        Strategy::Naive => {
            out.test = score_combined(&test_preds, None, &first.test.targets)?;
            out.fitting = Some(score_combined(&val_preds, None, &first.validation.targets)?);
        }
        Strategy::Weighted => {
            let fit = fit_weights(&val_preds, &first.validation.targets, spec.constraint)?;
            out.test = score_combined(&test_preds, Some(&fit.weights), &first.test.targets)?;
            out.fitting = Some(score_combined(&val_preds, Some(&fit.weights), &first.validation.targets)?);
            out.weights = Some(
                members
                    .iter()
                    .zip(&fit.weights)
                    .map(|(m, w)| MemberWeight {
                        source: m.source.clone(),
                        weight: *w,
                    })
                    .collect(),
            );
            out.degenerate_weights = fit.degenerate;
        }
        Strategy::Llm | Strategy::Ki => {
            let mut fused = Vec::new();
            for split in 0..3 {
                let pick = |t: &PreparedTask| -> LabeledSet {
                    match split {
                        0 => t.train.clone(),
                        1 => t.validation.clone(),
                        _ => t.test.clone(),
                    }
                };
                let mut sets = Vec::new();
                for m in &members {
                    sets.push(pick(ctx.prepared(&spec.dataset, &m.source)?));
                }
                let extra = extra_rows(ctx, spec, &sets[0])?;
                let refs: Vec<&LabeledSet> = sets.iter().collect();
                let f = fuse_sets(&refs, extra.as_deref())?;
                out.zero_extra_rows += f.zero_extra_ids.len();
                fused.push(f.set);
            }
            let outcome = train_fusion_ensemble(
                spec.fusion_head,
                first.task_kind,
                first.out_dim(),
                &fused[0],
                &fused[1],
                &fused[2],
                &ctx.train_config(&format!("fusion:{}", spec.name)),
            )?;
            if out.zero_extra_rows > 0 {
                log::warn!(
                    "ensemble {}: {} examples have an all-zero {} segment",
                    spec.name,
                    out.zero_extra_rows,
                    spec.strategy.name()
                );
            }
            out.test = outcome.test_metric;
            out.fitting = Some(outcome.validation_metric);
            out.fusion_param_count = outcome.head.param_count();
        }
    }
    Ok(out)
}

fn ensembles_phase(ctx: &mut Context, result: &mut RunResult) -> Result<(), (Option<String>, StageError)> {
    for spec in &ctx.cfg.ensembles {
        let r = evaluate_ensemble(ctx, spec).map_err(|e| (Some(spec.name.clone()), e))?;
        log::info!("ensemble {} ({}): test {:.4}", spec.name, spec.strategy.name(), r.test.value);
        result.ensembles.push(r);
    }
    Ok(())
}

/// Runs every phase, writing into `run_dir`.
pub fn run_into(cfg: &ExperimentConfig, run_dir: &Path) -> Result<RunOutcome, ExperimentError> {
    let mut result = RunResult::new(&cfg.experiment_id, cfg.seed, &cfg.digest);
    let mut ctx = Context::new(cfg);
    let fail = |phase: Phase, item: Option<String>, source: StageError| ExperimentError {
        phase,
        item,
        source: Box::new(source),
        run_dir: run_dir.to_path_buf(),
    };
    std::fs::create_dir_all(run_dir).map_err(|source| {
        fail(
            Phase::Heads,
            None,
            StageError::Io {
                context: run_dir.display().to_string(),
                source,
            },
        )
    })?;

    let mut files = Vec::new();
    for phase in Phase::ALL {
        let started = Instant::now();
        log::info!("phase {phase}");
        let outcome = match phase {
            Phase::Heads => heads_phase(&mut ctx, run_dir, &mut result),
            Phase::Sequences => sequences_phase(&mut ctx, &mut result),
            Phase::Ensembles => ensembles_phase(&mut ctx, &mut result),
            Phase::Reports => {
                result.completed_phases.push(phase.name().into());
                result
                    .wall_clock_seconds
                    .insert(phase.name().into(), started.elapsed().as_secs_f64());
                match write_reports(&result, run_dir) {
                    Ok(f) => {
                        files = f;
                        Ok(())
                    }
                    Err(e) => {
                        result.completed_phases.pop();
                        Err((None, e.into()))
                    }
                }
            }
        };
        if phase != Phase::Reports {
            result
                .wall_clock_seconds
                .insert(phase.name().into(), started.elapsed().as_secs_f64());
        }
        match outcome {
            Ok(()) if phase == Phase::Reports => {}
            Ok(()) => {
                result.completed_phases.push(phase.name().into());
                write_run_json(&result, run_dir).map_err(|e| fail(phase, None, e.into()))?;
            }
            Err((item, source)) => {
                result.failure = Some(PhaseFailure {
                    phase: phase.name().into(),
                    message: match &item {
                        Some(i) => format!("{i}: {source}"),
                        None => source.to_string(),
                    },
                });
                if let Err(e) = write_run_json(&result, run_dir) {
                    log::error!("could not persist partial results: {e}");
                }
                return Err(fail(phase, item, source));
            }
        }
    }
    Ok(RunOutcome {
        run_dir: run_dir.to_path_buf(),
        result,
        files,
    })
}

/// Runs into `<out_root>/<experiment_id>/`.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<RunOutcome, ExperimentError> {
    run_into(cfg, &out_root.join(&cfg.experiment_id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStat {
    pub name: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub experiment_id: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub models: Vec<SweepStat>,
    pub ensembles: Vec<SweepStat>,
}

fn stat(name: String, values: Vec<f64>) -> SweepStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    SweepStat {
        name,
        values,
        mean,
        std: var.sqrt(),
    }
}

/// Runs seeds `seed, seed+1, …, seed+n-1` into `seed-<s>/` subdirectories
/// and writes per-seed and aggregate test metrics to `sweep.json`.
pub fn run_sweep(cfg: &ExperimentConfig, out_root: &Path, n: usize) -> Result<SweepResult, ExperimentError> {
    let root = out_root.join(&cfg.experiment_id);
    let mut runs = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i);
        runs.push(run_into(&c, &root.join(format!("seed-{}", c.seed)))?.result);
    }
    let collect = |labels: Vec<String>, value: &dyn Fn(&RunResult, usize) -> f64| -> Vec<SweepStat> {
        labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| stat(label, runs.iter().map(|r| value(r, i)).collect()))
            .collect()
    };
    let first = &runs[0];
    let models = collect(
        first.models.iter().map(|m| format!("{}/{}", m.dataset, m.source)).collect(),
        &|r, i| r.models[i].test.value,
    );
    let ensembles = collect(first.ensembles.iter().map(|e| e.name.clone()).collect(), &|r, i| {
        r.ensembles[i].test.value
    });
    let sweep = SweepResult {
        experiment_id: cfg.experiment_id.clone(),
        config_digest: cfg.digest.clone(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        models,
        ensembles,
    };
    let mut text = serde_json::to_string_pretty(&sweep).expect("sweep serializes");
    text.push('\n');
    let path = root.join("sweep.json");
    crate::write_atomic(&path, text.as_bytes()).map_err(|source| ExperimentError {
        phase: Phase::Reports,
        item: None,
        source: Box::new(StageError::Io {
            context: path.display().to_string(),
            source,
        }),
        run_dir: root.clone(),
    })?;
    Ok(sweep)
}
