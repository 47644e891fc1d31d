//! Labeled task datasets and their JSON Lines ingestion.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" | "valid" | "val" | "dev" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TextFields {
    Single(String),
    Pair(String, String),
}

impl TextFields {
    /// Text handed to encoders; pairs are joined with a single space.
    pub fn joined(&self) -> String {
        match self {
            TextFields::Single(t) => t.clone(),
            TextFields::Pair(a, b) => format!("{a} {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub text: TextFields,
    /// Class index for classification, normalized value for regression.
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            Targets::Classes(_) => TaskKind::Classification,
            Targets::Values(_) => TaskKind::Regression,
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dataset {dataset}: duplicate example id {id:?}")]
    DuplicateId { dataset: String, id: String },
    #[error("dataset {dataset}: split {split} references unknown id {id:?}")]
    UnknownSplitId {
        dataset: String,
        split: &'static str,
        id: String,
    },
    #[error("dataset {dataset}: id {id:?} appears in more than one split")]
    OverlappingSplits { dataset: String, id: String },
    #[error("dataset {dataset}: example {id:?} has label {label} outside {range}")]
    LabelOutOfRange {
        dataset: String,
        id: String,
        label: f64,
        range: String,
    },
    #[error("dataset {dataset}: classification requires num_classes >= 2")]
    BadClassCount { dataset: String },
    #[error("{path}: either every line or no line may carry a \"split\" field")]
    MixedSplitAnnotation { path: PathBuf },
}

/// Labeled examples plus disjoint train/validation/test id lists.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    name: String,
    task_kind: TaskKind,
    num_classes: Option<usize>,
    examples: Vec<Example>,
    index: HashMap<String, usize>,
    splits: [Vec<String>; 3],
}

impl TaskDataset {
    pub fn new(
        name: impl Into<String>,
        task_kind: TaskKind,
        num_classes: Option<usize>,
        examples: Vec<Example>,
        train: Vec<String>,
        validation: Vec<String>,
        test: Vec<String>,
    ) -> Result<Self, DataError> {
        let name = name.into();
        let num_classes = match task_kind {
            TaskKind::Classification => {
                let n = num_classes.ok_or_else(|| DataError::BadClassCount {
                    dataset: name.clone(),
                })?;
                if n < 2 {
                    return Err(DataError::BadClassCount { dataset: name });
                }
                Some(n)
            }
            TaskKind::Regression => None,
        };
        let mut index = HashMap::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if index.insert(ex.id.clone(), i).is_some() {
                return Err(DataError::DuplicateId {
                    dataset: name,
                    id: ex.id.clone(),
                });
            }
            let ok = match num_classes {
                Some(n) => ex.label.fract() == 0.0 && ex.label >= 0.0 && ex.label < n as f64,
                None => (0.0..=1.0).contains(&ex.label),
            };
            if !ok {
                let range = match num_classes {
                    Some(n) => format!("classes 0..{n}"),
                    None => "[0, 1]".to_string(),
                };
                return Err(DataError::LabelOutOfRange {
                    dataset: name,
                    id: ex.id.clone(),
                    label: ex.label,
                    range,
                });
            }
        }
        let splits = [train, validation, test];
        let mut seen = HashSet::new();
        for (split, ids) in Split::ALL.iter().zip(&splits) {
            for id in ids {
                if !index.contains_key(id) {
                    return Err(DataError::UnknownSplitId {
                        dataset: name,
                        split: split.name(),
                        id: id.clone(),
                    });
                }
                if !seen.insert(id.as_str()) {
                    return Err(DataError::OverlappingSplits {
                        dataset: name,
                        id: id.clone(),
                    });
                }
            }
        }
        Ok(Self {
            name,
            task_kind,
            num_classes,
            examples,
            index,
            splits,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    /// Output width a head needs for this task.
    pub fn out_dim(&self) -> usize {
        self.num_classes.unwrap_or(1)
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, id: &str) -> Option<&Example> {
        self.index.get(id).map(|&i| &self.examples[i])
    }

    pub fn split_ids(&self, split: Split) -> &[String] {
        &self.splits[split as usize]
    }

    /// Targets for `ids` in the given order; ids must exist.
    pub fn targets_for(&self, ids: &[String]) -> Targets {
        let labels = ids.iter().map(|id| {
            self.example(id)
                .unwrap_or_else(|| panic!("unknown id {id:?} in {}", self.name))
                .label
        });
        match self.task_kind {
            TaskKind::Classification => Targets::Classes(labels.map(|l| l as usize).collect()),
            TaskKind::Regression => Targets::Values(labels.collect()),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    id: serde_json::Value,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    text_a: Option<String>,
    #[serde(default)]
    text_b: Option<String>,
    label: f64,
    #[serde(default)]
    split: Option<String>,
}

/// Options applied while reading a JSON Lines dataset.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub task_kind: TaskKind,
    pub num_classes: Option<usize>,
    /// Regression labels are divided by this before range checking.
    pub label_scale: f64,
}

/// Reads `{"id", "text" | "text_a"+"text_b", "label", ["split"]}` lines.
///
/// Without `split` fields, examples are assigned by a hash of their id:
/// 70% train, 15% validation, 15% test.
pub fn load_jsonl(path: &Path, name: &str, opts: &LoadOptions) -> Result<TaskDataset, DataError> {
    let raw = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, message: String| DataError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut examples = Vec::new();
    let mut split_tags = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord =
            serde_json::from_str(line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let id = match rec.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(parse_err(lineno, format!("id must be string or number, got {other}"))),
        };
        let text = match (rec.text, rec.text_a, rec.text_b) {
            (Some(t), None, None) => TextFields::Single(t),
            (None, Some(a), Some(b)) => TextFields::Pair(a, b),
            _ => {
                return Err(parse_err(
                    lineno,
                    "expected either \"text\" or both \"text_a\" and \"text_b\"".into(),
                ))
            }
        };
        let label = match opts.task_kind {
            TaskKind::Classification => rec.label,
            TaskKind::Regression => rec.label / opts.label_scale,
        };
        let split = match rec.split.as_deref() {
            None => None,
            Some(s) => Some(
                Split::parse(s).ok_or_else(|| parse_err(lineno, format!("unknown split {s:?}")))?,
            ),
        };
        split_tags.push(split);
        examples.push(Example { id, text, label });
    }

    let tagged = split_tags.iter().filter(|s| s.is_some()).count();
    if tagged != 0 && tagged != split_tags.len() {
        return Err(DataError::MixedSplitAnnotation {
            path: path.to_path_buf(),
        });
    }
    let mut splits: [Vec<String>; 3] = Default::default();
    for (ex, tag) in examples.iter().zip(&split_tags) {
        let split = tag.unwrap_or_else(|| hashed_split(&ex.id));
        splits[split as usize].push(ex.id.clone());
    }

    let num_classes = match opts.task_kind {
        TaskKind::Classification => opts.num_classes.or_else(|| {
            examples
                .iter()
                .map(|e| e.label)
                .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a.max(l))))
                .map(|m| (m.max(1.0) as usize) + 1)
        }),
        TaskKind::Regression => None,
    };
    let [train, validation, test] = splits;
    TaskDataset::new(name, opts.task_kind, num_classes, examples, train, validation, test)
}

fn hashed_split(id: &str) -> Split {
    // FNV-1a, independent of std's randomized hasher.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    match h % 100 {
        0..=69 => Split::Train,
        70..=84 => Split::Validation,
        _ => Split::Test,
    }
}
