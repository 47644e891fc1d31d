//! Run results and the artifacts rendered from them: the transfer table, the
//! strategy comparison table, and plot-ready series.
//!
//! Rendering never recomputes metrics; every number comes from a [`RunResult`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continual::{TransferRecord, FORGETTING_EPSILON};
use crate::ensemble::Strategy;
use crate::fsutil::write_atomic;
use crate::heads::{HeadKind, Metric, MetricKind};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing or malformed field: {message}")]
    MissingField { path: PathBuf, message: String },
}

/// A per-source baseline head trained on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub dataset: String,
    pub source: String,
    pub head: HeadKind,
    pub param_count: usize,
    pub validation: Metric,
    pub test: Metric,
    /// Checkpoint path relative to the run directory.
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub name: String,
    pub source: String,
    pub sequence: Vec<String>,
    pub shared_head: bool,
    pub head: HeadKind,
    /// Column order of `rows`.
    pub tasks: Vec<String>,
    /// Shared metric kind of all columns, absent when they differ.
    pub metric_kind: Option<MetricKind>,
    /// `rows[step][column]`; row 0 is the untrained baseline.
    pub rows: Vec<Vec<Metric>>,
    pub transfers: Vec<TransferRecord>,
    pub param_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberResult {
    pub source: String,
    pub param_count: usize,
    pub validation: Metric,
    pub test: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberWeight {
    pub source: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub name: String,
    pub dataset: String,
    pub strategy: Strategy,
    pub members: Vec<MemberResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auxiliary_source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub knowledge_base: Option<String>,
    /// Test-split metric of the ensemble.
    pub test: Metric,
    /// Metric on the split used for fitting (weights or fusion early stopping).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fitting: Option<Metric>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weights: Option<Vec<MemberWeight>>,
    #[serde(default)]
    pub degenerate_weights: bool,
    pub member_param_count: usize,
    /// Parameters of the trained fusion head (0 for prediction-space strategies).
    pub fusion_param_count: usize,
    /// Examples whose auxiliary or knowledge segment was all zero.
    #[serde(default)]
    pub zero_extra_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFailure {
    pub phase: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub experiment_id: String,
    pub seed: u64,
    /// SHA-256 of the config with keys sorted.
    pub config_digest: String,
    pub completed_phases: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<PhaseFailure>,
    pub models: Vec<ModelResult>,
    pub sequences: Vec<SequenceResult>,
    pub ensembles: Vec<EnsembleResult>,
    /// Seconds per phase. The only field that differs between identical runs.
    pub wall_clock_seconds: BTreeMap<String, f64>,
}

/// Key holding the non-deterministic timings in `run.json`.
pub const WALL_CLOCK_KEY: &str = "wall_clock_seconds";

impl RunResult {
    pub fn new(experiment_id: impl Into<String>, seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            seed,
            config_digest: config_digest.into(),
            completed_phases: Vec::new(),
            failure: None,
            models: Vec::new(),
            sequences: Vec::new(),
            ensembles: Vec::new(),
            wall_clock_seconds: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("RunResult serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ReportError::MissingField {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// One rendered table cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub text: String,
    pub bold: bool,
}

impl From<String> for Cell {
    fn from(text: String) -> Self {
        Self { text, bold: false }
    }
}

impl From<&str> for Cell {
    fn from(text: &str) -> Self {
        text.to_string().into()
    }
}

/// A table shared by the CSV and markdown renderers, so both carry the same cell text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub notes: Vec<String>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let line = |cells: Vec<&str>| cells.into_iter().map(csv_field).collect::<Vec<_>>().join(",");
        out.push_str(&line(self.headers.iter().map(String::as_str).collect()));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row.iter().map(|c| c.text.as_str()).collect()));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let esc = |s: &str| s.replace('|', "\\|");
        let mut out = format!("## {}\n\n", self.title);
        out.push_str(&format!("| {} |\n", self.headers.iter().map(|h| esc(h)).collect::<Vec<_>>().join(" | ")));
        out.push_str(&format!("|{}\n", "---|".repeat(self.headers.len())));
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| {
                    let t = esc(&c.text);
                    if c.bold && !t.is_empty() {
                        format!("**{t}**")
                    } else {
                        t
                    }
                })
                .collect();
            out.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
        if !self.notes.is_empty() {
            out.push('\n');
            for n in &self.notes {
                out.push_str(&format!("- {n}\n"));
            }
        }
        out
    }
}

/// Percentage with one decimal.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.1}%", fraction * 100.0)
}

/// Knowledge-transfer cell: magnitude with a `(+)`/`(−)` mark and a `CF:`
/// prefix on forgetting; exact zero carries no mark.
pub fn format_transfer(kt: f64, is_forgetting: bool) -> String {
    let mag = format_percent(kt.abs());
    let mark = if kt > FORGETTING_EPSILON {
        " (+)"
    } else if kt < -FORGETTING_EPSILON {
        " (−)"
    } else {
        ""
    };
    let prefix = if is_forgetting { "CF: " } else { "" };
    format!("{prefix}{mag}{mark}")
}

pub const TRANSFER_HEADERS: [&str; 7] = [
    "Sequence",
    "Step",
    "FineTuned Model",
    "Evaluation Task",
    "Accuracy (A)",
    "Comparison Baseline (CB)",
    "Knowledge Transfer (A−CB)",
];

/// Transfer ledger rows for every sequence, in step order.
pub fn transfer_table(sequences: &[SequenceResult]) -> Table {
    let mut rows = Vec::new();
    for s in sequences {
        for r in &s.transfers {
            rows.push(vec![
                Cell::from(s.name.as_str()),
                r.step.to_string().into(),
                r.model.as_str().into(),
                r.task.as_str().into(),
                format_percent(r.a).into(),
                format!("{} ({})", format_percent(r.cb), r.baseline).into(),
                format_transfer(r.kt, r.is_forgetting).into(),
            ]);
        }
    }
    Table {
        title: "Knowledge transfer".into(),
        headers: TRANSFER_HEADERS.iter().map(|s| s.to_string()).collect(),
        rows,
        notes: Vec::new(),
    }
}

pub const STRATEGY_HEADERS: [&str; 8] = [
    "Dataset",
    "Ensemble",
    "Size",
    "Naïve",
    "Weighted",
    "LLM",
    "KI",
    "Fusion Head Size",
];

fn strategy_column(s: Strategy) -> usize {
    match s {
        Strategy::Naive => 3,
        Strategy::Weighted => 4,
        Strategy::Llm => 5,
        Strategy::Ki => 6,
    }
}

/// One row per (dataset, member set) with a column per strategy. The best
/// value in each row is bolded (lowest MSE, highest accuracy); ties bold the
/// leftmost and add a note.
pub fn strategy_table(ensembles: &[EnsembleResult]) -> Table {
    struct Row {
        dataset: String,
        label: String,
        size: usize,
        cells: [Option<Metric>; 4],
        fusion: Vec<(Strategy, usize)>,
    }
    let mut groups: Vec<Row> = Vec::new();
    for e in ensembles {
        let label = e.members.iter().map(|m| m.source.as_str()).collect::<Vec<_>>().join(" & ");
        let idx = match groups.iter().position(|g| g.dataset == e.dataset && g.label == label) {
            Some(i) => i,
            None => {
                groups.push(Row {
                    dataset: e.dataset.clone(),
                    label,
                    size: e.member_param_count,
                    cells: [None; 4],
                    fusion: Vec::new(),
                });
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        g.cells[strategy_column(e.strategy) - 3] = Some(e.test);
        if e.strategy.is_fusion() {
            g.fusion.push((e.strategy, e.fusion_param_count));
        }
    }

    let mut notes = Vec::new();
    let rows = groups
        .iter()
        .map(|g| {
            let present: Vec<(usize, Metric)> =
                g.cells.iter().enumerate().filter_map(|(i, m)| m.map(|m| (i, m))).collect();
            let better = |a: f64, b: f64, kind: MetricKind| if kind.higher_is_better() { a > b } else { a < b };
            let mut best: Option<(usize, Metric)> = None;
            for &(i, m) in &present {
                if best.is_none_or(|(_, b)| better(m.value, b.value, m.kind)) {
                    best = Some((i, m));
                }
            }
            if let Some((bi, bm)) = best {
                let tied: Vec<&str> = present
                    .iter()
                    .filter(|(i, m)| *i != bi && m.value == bm.value)
                    .map(|(i, _)| STRATEGY_HEADERS[i + 3])
                    .collect();
                if !tied.is_empty() {
                    notes.push(format!(
                        "{} / {}: {} ties with {}; leftmost marked",
                        g.dataset,
                        g.label,
                        STRATEGY_HEADERS[bi + 3],
                        tied.join(", ")
                    ));
                }
            }
            let mut row: Vec<Cell> = vec![g.dataset.as_str().into(), g.label.as_str().into(), g.size.to_string().into()];
            for (i, m) in g.cells.iter().enumerate() {
                row.push(Cell {
                    text: m.map_or(String::new(), |m| format!("{:.4}", m.value)),
                    bold: best.is_some_and(|(b, _)| b == i),
                });
            }
            let fusion = g
                .fusion
                .iter()
                .map(|(s, n)| format!("{} {n}", s.name()))
                .collect::<Vec<_>>()
                .join("; ");
            row.push(fusion.into());
            row
        })
        .collect();
    Table {
        title: "Ensemble strategies (test metric)".into(),
        headers: STRATEGY_HEADERS.iter().map(|s| s.to_string()).collect(),
        rows,
        notes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub sequence: String,
    /// `"A → B"`-style label of the training order.
    pub label: String,
    pub task: String,
    pub metric_kind: MetricKind,
    /// Model after each step: `base`, `base → A`, `base → A → B`, ...
    pub models: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub series: Vec<PlotSeries>,
}

/// One metric-versus-step series per evaluated task of every sequence.
pub fn plot_data(sequences: &[SequenceResult]) -> PlotData {
    let mut series = Vec::new();
    for s in sequences {
        let mut models = vec!["base".to_string()];
        for t in &s.sequence {
            models.push(format!("{} → {t}", models.last().expect("non-empty")));
        }
        for (col, task) in s.tasks.iter().enumerate() {
            series.push(PlotSeries {
                sequence: s.name.clone(),
                label: s.sequence.join(" → "),
                task: task.clone(),
                metric_kind: s.rows[0][col].kind,
                models: models.clone(),
                values: s.rows.iter().map(|r| r[col].value).collect(),
            });
        }
    }
    PlotData { series }
}

pub const REPORT_FILES: [&str; 6] = [
    "run.json",
    "transfer_table.csv",
    "transfer_table.md",
    "strategy_table.csv",
    "strategy_table.md",
    "plot_data.json",
];

fn write(dir: &Path, name: &str, content: &str) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    write_atomic(&path, content.as_bytes()).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes `run.json` alone; used to persist partial runs between phases.
pub fn write_run_json(result: &RunResult, dir: &Path) -> Result<PathBuf, ReportError> {
    write(dir, "run.json", &result.to_json())
}

/// Writes every report file into `dir`.
pub fn write_reports(result: &RunResult, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let transfer = transfer_table(&result.sequences);
    let strategy = strategy_table(&result.ensembles);
    let mut plot = serde_json::to_string_pretty(&plot_data(&result.sequences)).expect("plot data serializes");
    plot.push('\n');
    Ok(vec![
        write_run_json(result, dir)?,
        write(dir, "transfer_table.csv", &transfer.to_csv())?,
        write(dir, "transfer_table.md", &transfer.to_markdown())?,
        write(dir, "strategy_table.csv", &strategy.to_csv())?,
        write(dir, "strategy_table.md", &strategy.to_markdown())?,
        write(dir, "plot_data.json", &plot)?,
    ])
}
