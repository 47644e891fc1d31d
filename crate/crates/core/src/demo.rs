//! The bundled demo: two topic tasks for a sequence, an STS-like and a
//! planted-knowledge regression task for ensembles, a toy knowledge base, an
//! auxiliary embedding file, and the experiment config tying them together.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use thiserror::Error;

use crate::bench::{keyword_task, planted_knowledge, sts_like, toy_entities, TOY_KB_DIM};
use crate::data::{Split, TaskDataset, TextFields};
use crate::embedding::{store_embeddings, EmbeddingError, EmbeddingMatrix, HashEncoder};
use crate::knowledge::{KnowledgeBase, KnowledgeError};

/// Every file `write_demo` creates, relative to its output directory.
pub const DEMO_FILES: [&str; 10] = [
    "demo.json",
    "data/topic_a.jsonl",
    "data/topic_b.jsonl",
    "data/sts_like.jsonl",
    "data/planted.jsonl",
    "kb/labels.tsv",
    "kb/vectors.l3em",
    "kb/vectors.l3em.manifest.json",
    "embeddings/aux.l3em",
    "embeddings/aux.l3em.manifest.json",
];

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

fn write_jsonl(ds: &TaskDataset, path: &Path, label_scale: f64) -> std::io::Result<()> {
    let mut out = String::new();
    for split in Split::ALL {
        for id in ds.split_ids(split) {
            let e = ds.example(id).expect("split id");
            let mut line = match &e.text {
                TextFields::Single(t) => json!({"id": e.id, "text": t}),
                TextFields::Pair(a, b) => json!({"id": e.id, "text_a": a, "text_b": b}),
            };
            let label = e.label * label_scale;
            line["label"] = if label.fract() == 0.0 { json!(label as i64) } else { json!(label) };
            line["split"] = json!(split.name());
            out.push_str(&line.to_string());
            out.push('\n');
        }
    }
    fs::write(path, out)
}

/// Writes the demo datasets, toy knowledge base, auxiliary embedding file and
/// `demo.json` under `out`. Output is byte-identical for every call.
pub fn write_demo(out: &Path) -> Result<PathBuf, DemoError> {
    for sub in ["data", "kb", "embeddings"] {
        fs::create_dir_all(out.join(sub))?;
    }

    // Toy knowledge base: labels TSV plus Gaussian vectors.
    let entities = toy_entities();
    let mut tsv = String::from("# entity_id\tcanonical_label\taliases\n");
    for e in &entities {
        tsv.push_str(&format!("{}\t{}\t{}\n", e.id, e.label, e.aliases.join("|")));
    }
    fs::write(out.join("kb/labels.tsv"), tsv)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let values: Vec<f32> = (0..entities.len() * TOY_KB_DIM)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    let ids: Vec<String> = entities.iter().map(|e| e.id.clone()).collect();
    let vectors = EmbeddingMatrix::new("toy-kb", TOY_KB_DIM, ids, values)?;
    store_embeddings(&vectors, &out.join("kb/vectors.l3em"))?;
    let kb = KnowledgeBase::new(entities, vectors)?;

    let topic_a = keyword_task("topic-a", 1, 11, 600);
    let topic_b = keyword_task("topic-b", 1, 12, 600);
    let sts = sts_like(3, 600);
    let planted = planted_knowledge(4, 600, &kb);
    write_jsonl(&topic_a, &out.join("data/topic_a.jsonl"), 1.0)?;
    write_jsonl(&topic_b, &out.join("data/topic_b.jsonl"), 1.0)?;
    write_jsonl(&sts, &out.join("data/sts_like.jsonl"), 5.0)?;
    write_jsonl(&planted, &out.join("data/planted.jsonl"), 1.0)?;

    // Auxiliary channel: a wider hash encoding stored as an L3EM file.
    let enc = HashEncoder::new(64, 99)?;
    let (mut ids, mut texts) = (Vec::new(), Vec::new());
    for ds in [&sts, &planted] {
        for e in ds.examples() {
            ids.push(e.id.clone());
            texts.push(e.text.joined());
        }
    }
    store_embeddings(&enc.encode("aux-64", ids, &texts)?, &out.join("embeddings/aux.l3em"))?;

    let mut ensembles = Vec::new();
    for (dataset, strategies) in [
        ("sts-like", &["naive", "weighted", "llm"][..]),
        ("planted", &["naive", "weighted", "llm", "ki"][..]),
    ] {
        for s in strategies {
            let mut e = json!({
                "name": format!("{dataset}-{s}"),
                "dataset": dataset,
                "strategy": s,
                "members": [{"source": "hash-a"}, {"source": "hash-b"}],
            });
            match *s {
                "llm" => e["auxiliary_source"] = json!("aux-64"),
                "ki" => e["knowledge_base"] = json!("toy"),
                _ => {}
            }
            ensembles.push(e);
        }
    }
    let config = json!({
        "experiment_id": "demo",
        "seed": 7,
        "output_dir": "results",
        "head": {"kind": "linear"},
        "train": {"max_epochs": 50, "early_stop_patience": 5},
        "datasets": [
            {"name": "topic-a", "path": "data/topic_a.jsonl", "task_kind": "classification", "num_classes": 2},
            {"name": "topic-b", "path": "data/topic_b.jsonl", "task_kind": "classification", "num_classes": 2},
            {"name": "sts-like", "path": "data/sts_like.jsonl", "task_kind": "regression", "label_scale": 5.0},
            {"name": "planted", "path": "data/planted.jsonl", "task_kind": "regression"}
        ],
        "embedding_sources": [
            {"name": "hash-a", "hash": {"dim": 128, "seed": 1}},
            {"name": "hash-b", "hash": {"dim": 128, "seed": 2}},
            {"name": "aux-64", "path": "embeddings/aux.l3em"}
        ],
        "knowledge_bases": [
            {"name": "toy", "labels": "kb/labels.tsv", "vectors": "kb/vectors.l3em"}
        ],
        "sequences": [
            {"name": "topics-shared", "tasks": ["topic-a", "topic-b"], "source": "hash-a", "shared_head": true},
            {"name": "topics-fresh", "tasks": ["topic-a", "topic-b"], "source": "hash-a", "shared_head": false}
        ],
        "ensembles": ensembles,
    });
    let path = out.join("demo.json");
    fs::write(&path, serde_json::to_string_pretty(&config).expect("json value") + "\n")?;
    Ok(path)
}
