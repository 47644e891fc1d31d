//! Experiment configuration: parsing, cross-reference resolution, and
//! validation that reports every violation with a key-path location.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::data::TaskKind;
use crate::ensemble::{Strategy, WeightConstraint};
use crate::heads::{HeadKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    ParseError,
    UnknownKey,
    MissingKey,
    InvalidValue,
    UnresolvedReference,
    DuplicateName,
}

impl fmt::Display for IssueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IssueKind::ParseError => "ParseError",
            IssueKind::UnknownKey => "UnknownKey",
            IssueKind::MissingKey => "MissingKey",
            IssueKind::InvalidValue => "InvalidValue",
            IssueKind::UnresolvedReference => "UnresolvedReference",
            IssueKind::DuplicateName => "DuplicateName",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub kind: IssueKind,
    /// Key path such as `ensembles[0].members[1]`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.kind, self.location, self.message)
    }
}

/// Every violation found in one config file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} problem(s)", self.path.display(), self.issues.len())?;
        for i in &self.issues {
            write!(f, "\n  {i}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub name: String,
    pub path: PathBuf,
    pub task_kind: TaskKind,
    pub num_classes: Option<usize>,
    pub label_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    Hash { dim: usize, seed: u64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub name: String,
    pub kind: SourceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBaseConfig {
    pub name: String,
    pub labels: PathBuf,
    pub vectors: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub name: String,
    pub tasks: Vec<String>,
    pub source: String,
    pub shared_head: bool,
    pub head: HeadKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberSpec {
    pub source: String,
    /// Pretrained head to use instead of training one.
    pub checkpoint: Option<PathBuf>,
}

/// Declarative ensemble: members plus strategy and fusion inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub name: String,
    pub dataset: String,
    pub strategy: Strategy,
    pub members: Vec<MemberSpec>,
    pub auxiliary_source: Option<String>,
    pub knowledge_base: Option<String>,
    pub constraint: WeightConstraint,
    pub fusion_head: HeadKind,
}

/// A fully resolved experiment; paths are absolute or relative to the
/// process working directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub head: HeadKind,
    pub datasets: Vec<DatasetConfig>,
    pub embedding_sources: Vec<SourceConfig>,
    pub knowledge_bases: Vec<KnowledgeBaseConfig>,
    pub sequences: Vec<SequenceConfig>,
    pub ensembles: Vec<EnsembleSpec>,
    /// SHA-256 hex of the config JSON with object keys sorted.
    pub digest: String,
}

impl ExperimentConfig {
    pub fn dataset(&self, name: &str) -> Option<&DatasetConfig> {
        self.datasets.iter().find(|d| d.name == name)
    }

    pub fn source(&self, name: &str) -> Option<&SourceConfig> {
        self.embedding_sources.iter().find(|s| s.name == name)
    }

    pub fn knowledge_base(&self, name: &str) -> Option<&KnowledgeBaseConfig> {
        self.knowledge_bases.iter().find(|k| k.name == name)
    }
}

/// Default hidden width for `{"kind": "mlp1"}` without `hidden`.
pub const DEFAULT_HIDDEN: usize = 32;

/// Digest of a JSON value with object keys sorted at every level.
pub fn canonical_digest(value: &Value) -> String {
    fn canonical(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                let mut out = Map::new();
                for k in keys {
                    out.insert(k.clone(), canonical(&m[k]));
                }
                Value::Object(out)
            }
            Value::Array(a) => Value::Array(a.iter().map(canonical).collect()),
            other => other.clone(),
        }
    }
    let bytes = serde_json::to_vec(&canonical(value)).expect("JSON value serializes");
    hex::encode(Sha256::digest(&bytes))
}

struct Walker<'a> {
    base: &'a Path,
    issues: Vec<ConfigIssue>,
}

fn at(loc: &str, key: &str) -> String {
    if loc.is_empty() {
        key.to_string()
    } else {
        format!("{loc}.{key}")
    }
}

impl<'a> Walker<'a> {
    fn issue(&mut self, kind: IssueKind, location: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            kind,
            location: location.into(),
            message: message.into(),
        });
    }

    fn object<'v>(&mut self, v: &'v Value, loc: &str, allowed: &[&str]) -> Option<&'v Map<String, Value>> {
        let Some(m) = v.as_object() else {
            self.issue(IssueKind::InvalidValue, loc, "expected an object");
            return None;
        };
        for k in m.keys() {
            if !allowed.contains(&k.as_str()) {
                self.issue(
                    IssueKind::UnknownKey,
                    at(loc, k),
                    format!("unknown key; expected one of: {}", allowed.join(", ")),
                );
            }
        }
        Some(m)
    }

    fn required<'v>(&mut self, m: &'v Map<String, Value>, loc: &str, key: &str) -> Option<&'v Value> {
        let v = m.get(key);
        if v.is_none() {
            self.issue(IssueKind::MissingKey, at(loc, key), "required key is missing");
        }
        v
    }

    fn string(&mut self, v: &Value, loc: &str) -> Option<String> {
        match v.as_str() {
            Some(s) if !s.is_empty() => Some(s.to_string()),
            _ => {
                self.issue(IssueKind::InvalidValue, loc, "expected a non-empty string");
                None
            }
        }
    }

    fn req_string(&mut self, m: &Map<String, Value>, loc: &str, key: &str) -> Option<String> {
        let v = self.required(m, loc, key)?;
        self.string(v, &at(loc, key))
    }

    fn uint(&mut self, v: &Value, loc: &str) -> Option<u64> {
        let n = v.as_u64();
        if n.is_none() {
            self.issue(IssueKind::InvalidValue, loc, "expected a non-negative integer");
        }
        n
    }

    fn path(&mut self, v: &Value, loc: &str) -> Option<PathBuf> {
        self.string(v, loc).map(|s| self.base.join(s))
    }

    fn array<'v>(&mut self, m: &'v Map<String, Value>, loc: &str, key: &str) -> &'v [Value] {
        match m.get(key) {
            None => &[],
            Some(Value::Array(a)) => a,
            Some(_) => {
                self.issue(IssueKind::InvalidValue, at(loc, key), "expected an array");
                &[]
            }
        }
    }

    fn head_kind(&mut self, v: &Value, loc: &str) -> Option<HeadKind> {
        let m = self.object(v, loc, &["kind", "hidden"])?;
        let kind = self.req_string(m, loc, "kind")?;
        match kind.as_str() {
            "linear" => {
                if m.contains_key("hidden") {
                    self.issue(IssueKind::InvalidValue, at(loc, "hidden"), "linear heads have no hidden layer");
                }
                Some(HeadKind::Linear)
            }
            "mlp1" => {
                let hidden = match m.get("hidden") {
                    Some(h) => self.uint(h, &at(loc, "hidden"))? as usize,
                    None => DEFAULT_HIDDEN,
                };
                if hidden == 0 {
                    self.issue(IssueKind::InvalidValue, at(loc, "hidden"), "hidden width must be positive");
                    return None;
                }
                Some(HeadKind::Mlp1 { hidden })
            }
            other => {
                self.issue(
                    IssueKind::InvalidValue,
                    at(loc, "kind"),
                    format!("unknown head kind {other:?}; expected linear or mlp1"),
                );
                None
            }
        }
    }

    fn unique(&mut self, seen: &mut HashSet<String>, name: &str, loc: &str) {
        if !seen.insert(name.to_string()) {
            self.issue(IssueKind::DuplicateName, loc, format!("name {name:?} is defined more than once"));
        }
    }

    fn reference(&mut self, known: &HashSet<String>, name: &str, loc: &str, what: &str) {
        if !known.contains(name) {
            self.issue(IssueKind::UnresolvedReference, loc, format!("{what} {name:?} is not defined"));
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "experiment_id",
    "seed",
    "output_dir",
    "train",
    "head",
    "datasets",
    "embedding_sources",
    "knowledge_bases",
    "sequences",
    "ensembles",
];

/// Parses and resolves a config from JSON text. Relative paths resolve
/// against `base_dir` (normally the config file's directory).
pub fn parse_config(text: &str, base_dir: &Path, origin: &Path) -> Result<ExperimentConfig, ConfigError> {
    let fail = |issues| ConfigError {
        path: origin.to_path_buf(),
        issues,
    };
    let root: Value = serde_json::from_str(text).map_err(|e| {
        fail(vec![ConfigIssue {
            kind: IssueKind::ParseError,
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        }])
    })?;
    let mut w = Walker {
        base: base_dir,
        issues: Vec::new(),
    };
    let Some(top) = w.object(&root, "", TOP_KEYS) else {
        return Err(fail(w.issues));
    };

    let experiment_id = w.req_string(top, "", "experiment_id");
    if let Some(id) = &experiment_id {
        if id.contains(['/', '\\']) || id == "." || id == ".." {
            w.issue(IssueKind::InvalidValue, "experiment_id", "must be a plain directory name");
        }
    }
    let seed = w.required(top, "", "seed").and_then(|v| w.uint(v, "seed"));
    let output_dir = match top.get("output_dir") {
        Some(v) => w.path(v, "output_dir"),
        None => Some(base_dir.join("results")),
    };
    let train = match top.get("train") {
        Some(v) => match serde_json::from_value::<TrainConfig>(v.clone()) {
            Ok(t) => match t.validate() {
                Ok(()) => Some(t),
                Err(e) => {
                    w.issue(IssueKind::InvalidValue, "train", e.to_string());
                    None
                }
            },
            Err(e) => {
                let kind = if e.to_string().contains("unknown field") {
                    IssueKind::UnknownKey
                } else {
                    IssueKind::InvalidValue
                };
                w.issue(kind, "train", e.to_string());
                None
            }
        },
        None => Some(TrainConfig::default()),
    };
    let head = match top.get("head") {
        Some(v) => w.head_kind(v, "head"),
        None => Some(HeadKind::Linear),
    };

    let mut dataset_names = HashSet::new();
    let mut datasets = Vec::new();
    for (i, v) in w.array(top, "", "datasets").iter().enumerate() {
        let loc = format!("datasets[{i}]");
        let Some(m) = w.object(v, &loc, &["name", "path", "task_kind", "num_classes", "label_scale"]) else {
            continue;
        };
        let name = w.req_string(m, &loc, "name");
        if let Some(n) = &name {
            w.unique(&mut dataset_names, n, &at(&loc, "name"));
        }
        let path = w.required(m, &loc, "path").and_then(|v| w.path(v, &at(&loc, "path")));
        let task_kind = w.req_string(m, &loc, "task_kind").and_then(|k| match k.as_str() {
            "classification" => Some(TaskKind::Classification),
            "regression" => Some(TaskKind::Regression),
            other => {
                w.issue(
                    IssueKind::InvalidValue,
                    at(&loc, "task_kind"),
                    format!("{other:?} is not classification or regression"),
                );
                None
            }
        });
        let num_classes = m.get("num_classes").and_then(|v| w.uint(v, &at(&loc, "num_classes")));
        if num_classes.is_some() && task_kind == Some(TaskKind::Regression) {
            w.issue(IssueKind::InvalidValue, at(&loc, "num_classes"), "regression datasets have no classes");
        }
        let label_scale = match m.get("label_scale") {
            Some(v) => match v.as_f64() {
                Some(s) if s > 0.0 && s.is_finite() => Some(s),
                _ => {
                    w.issue(IssueKind::InvalidValue, at(&loc, "label_scale"), "expected a positive number");
                    None
                }
            },
            None => Some(1.0),
        };
        if let (Some(name), Some(path), Some(task_kind), Some(label_scale)) = (name, path, task_kind, label_scale) {
            datasets.push(DatasetConfig {
                name,
                path,
                task_kind,
                num_classes: num_classes.map(|n| n as usize),
                label_scale,
            });
        }
    }

    let mut source_names = HashSet::new();
    let mut embedding_sources = Vec::new();
    for (i, v) in w.array(top, "", "embedding_sources").iter().enumerate() {
        let loc = format!("embedding_sources[{i}]");
        let Some(m) = w.object(v, &loc, &["name", "hash", "path"]) else {
            continue;
        };
        let name = w.req_string(m, &loc, "name");
        if let Some(n) = &name {
            w.unique(&mut source_names, n, &at(&loc, "name"));
        }
        let kind = match (m.get("hash"), m.get("path")) {
            (Some(h), None) => {
                let hloc = at(&loc, "hash");
                w.object(h, &hloc, &["dim", "seed"]).and_then(|hm| {
                    let dim = w.required(hm, &hloc, "dim").and_then(|v| w.uint(v, &at(&hloc, "dim")));
                    let seed = w.required(hm, &hloc, "seed").and_then(|v| w.uint(v, &at(&hloc, "seed")));
                    match (dim, seed) {
                        (Some(0), _) => {
                            w.issue(IssueKind::InvalidValue, at(&hloc, "dim"), "dim must be positive");
                            None
                        }
                        (Some(dim), Some(seed)) => Some(SourceKind::Hash {
                            dim: dim as usize,
                            seed,
                        }),
                        _ => None,
                    }
                })
            }
            (None, Some(p)) => w.path(p, &at(&loc, "path")).map(|path| SourceKind::File { path }),
            _ => {
                w.issue(IssueKind::InvalidValue, &loc, "exactly one of \"hash\" or \"path\" is required");
                None
            }
        };
        if let (Some(name), Some(kind)) = (name, kind) {
            embedding_sources.push(SourceConfig { name, kind });
        }
    }

    let mut kb_names = HashSet::new();
    let mut knowledge_bases = Vec::new();
    for (i, v) in w.array(top, "", "knowledge_bases").iter().enumerate() {
        let loc = format!("knowledge_bases[{i}]");
        let Some(m) = w.object(v, &loc, &["name", "labels", "vectors"]) else {
            continue;
        };
        let name = w.req_string(m, &loc, "name");
        if let Some(n) = &name {
            w.unique(&mut kb_names, n, &at(&loc, "name"));
        }
        let labels = w.required(m, &loc, "labels").and_then(|v| w.path(v, &at(&loc, "labels")));
        let vectors = w.required(m, &loc, "vectors").and_then(|v| w.path(v, &at(&loc, "vectors")));
        if let (Some(name), Some(labels), Some(vectors)) = (name, labels, vectors) {
            knowledge_bases.push(KnowledgeBaseConfig { name, labels, vectors });
        }
    }

    let mut sequence_names = HashSet::new();
    let mut sequences = Vec::new();
    for (i, v) in w.array(top, "", "sequences").iter().enumerate() {
        let loc = format!("sequences[{i}]");
        let Some(m) = w.object(v, &loc, &["name", "tasks", "source", "shared_head", "head"]) else {
            continue;
        };
        let name = w.req_string(m, &loc, "name");
        if let Some(n) = &name {
            w.unique(&mut sequence_names, n, &at(&loc, "name"));
        }
        let mut tasks = Vec::new();
        match w.required(m, &loc, "tasks") {
            Some(Value::Array(a)) if !a.is_empty() => {
                for (j, t) in a.iter().enumerate() {
                    let tloc = format!("{loc}.tasks[{j}]");
                    if let Some(t) = w.string(t, &tloc) {
                        w.reference(&dataset_names, &t, &tloc, "dataset");
                        tasks.push(t);
                    }
                }
            }
            Some(_) => w.issue(IssueKind::InvalidValue, at(&loc, "tasks"), "expected a non-empty array of dataset names"),
            None => {}
        }
        let source = w.req_string(m, &loc, "source");
        if let Some(s) = &source {
            w.reference(&source_names, s, &at(&loc, "source"), "embedding source");
        }
        let shared_head = match m.get("shared_head") {
            Some(Value::Bool(b)) => Some(*b),
            Some(_) => {
                w.issue(IssueKind::InvalidValue, at(&loc, "shared_head"), "expected true or false");
                None
            }
            None => Some(true),
        };
        let seq_head = match m.get("head") {
            Some(h) => w.head_kind(h, &at(&loc, "head")),
            None => head,
        };
        if let (Some(name), Some(source), Some(shared_head), Some(head)) = (name, source, shared_head, seq_head) {
            sequences.push(SequenceConfig {
                name,
                tasks,
                source,
                shared_head,
                head,
            });
        }
    }

    let mut ensemble_names = HashSet::new();
    let mut ensembles = Vec::new();
    for (i, v) in w.array(top, "", "ensembles").iter().enumerate() {
        let loc = format!("ensembles[{i}]");
        let Some(m) = w.object(
            v,
            &loc,
            &[
                "name",
                "dataset",
                "strategy",
                "members",
                "auxiliary_source",
                "knowledge_base",
                "constraint",
                "fusion_head",
            ],
        ) else {
            continue;
        };
        let name = w.req_string(m, &loc, "name");
        if let Some(n) = &name {
            w.unique(&mut ensemble_names, n, &at(&loc, "name"));
        }
        let dataset = w.req_string(m, &loc, "dataset");
        if let Some(d) = &dataset {
            w.reference(&dataset_names, d, &at(&loc, "dataset"), "dataset");
        }
        let strategy = w.req_string(m, &loc, "strategy").and_then(|s| {
            match serde_json::from_value::<Strategy>(Value::String(s.clone())) {
                Ok(st) => Some(st),
                Err(_) => {
                    w.issue(
                        IssueKind::InvalidValue,
                        at(&loc, "strategy"),
                        format!("{s:?} is not one of naive, weighted, llm, ki"),
                    );
                    None
                }
            }
        });
        let mut members = Vec::new();
        match w.required(m, &loc, "members") {
            Some(Value::Array(a)) if !a.is_empty() => {
                for (j, mv) in a.iter().enumerate() {
                    let mloc = format!("{loc}.members[{j}]");
                    let Some(mm) = w.object(mv, &mloc, &["source", "checkpoint"]) else {
                        continue;
                    };
                    let Some(source) = w.req_string(mm, &mloc, "source") else {
                        continue;
                    };
                    if !source_names.contains(&source) {
                        w.issue(
                            IssueKind::UnresolvedReference,
                            &mloc,
                            format!("embedding source {source:?} is not defined"),
                        );
                    }
                    let checkpoint = mm.get("checkpoint").and_then(|c| w.path(c, &at(&mloc, "checkpoint")));
                    members.push(MemberSpec { source, checkpoint });
                }
            }
            Some(_) => w.issue(IssueKind::InvalidValue, at(&loc, "members"), "expected a non-empty array"),
            None => {}
        }
        let auxiliary_source = m.get("auxiliary_source").and_then(|v| w.string(v, &at(&loc, "auxiliary_source")));
        if let Some(a) = &auxiliary_source {
            w.reference(&source_names, a, &at(&loc, "auxiliary_source"), "embedding source");
        }
        let knowledge_base = m.get("knowledge_base").and_then(|v| w.string(v, &at(&loc, "knowledge_base")));
        if let Some(k) = &knowledge_base {
            w.reference(&kb_names, k, &at(&loc, "knowledge_base"), "knowledge base");
        }
        match strategy {
            Some(Strategy::Llm) if !m.contains_key("auxiliary_source") => {
                w.issue(IssueKind::MissingKey, at(&loc, "auxiliary_source"), "llm ensembles need an auxiliary source")
            }
            Some(Strategy::Ki) if !m.contains_key("knowledge_base") => {
                w.issue(IssueKind::MissingKey, at(&loc, "knowledge_base"), "ki ensembles need a knowledge base")
            }
            _ => {}
        }
        let constraint = match m.get("constraint") {
            Some(v) => match serde_json::from_value::<WeightConstraint>(v.clone()) {
                Ok(c) => Some(c),
                Err(_) => {
                    w.issue(IssueKind::InvalidValue, at(&loc, "constraint"), "expected \"simplex\" or \"unconstrained\"");
                    None
                }
            },
            None => Some(WeightConstraint::Simplex),
        };
        let fusion_head = match m.get("fusion_head") {
            Some(h) => w.head_kind(h, &at(&loc, "fusion_head")),
            None => Some(HeadKind::Linear),
        };
        if let (Some(name), Some(dataset), Some(strategy), Some(constraint), Some(fusion_head)) =
            (name, dataset, strategy, constraint, fusion_head)
        {
            ensembles.push(EnsembleSpec {
                name,
                dataset,
                strategy,
                members,
                auxiliary_source,
                knowledge_base,
                constraint,
                fusion_head,
            });
        }
    }

    if !w.issues.is_empty() {
        return Err(fail(w.issues));
    }
    Ok(ExperimentConfig {
        experiment_id: experiment_id.expect("no issues"),
        seed: seed.expect("no issues"),
        output_dir: output_dir.expect("no issues"),
        train: train.expect("no issues"),
        head: head.expect("no issues"),
        datasets,
        embedding_sources,
        knowledge_bases,
        sequences,
        ensembles,
        digest: canonical_digest(&root),
    })
}

/// Reads and validates a config file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        issues: vec![ConfigIssue {
            kind: IssueKind::ParseError,
            location: path.display().to_string(),
            message: e.to_string(),
        }],
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, path)
}
