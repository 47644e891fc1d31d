//! Independent oracles shared by the integration suites.

#![allow(dead_code)]

use l3ens_core::data::Targets;
use l3ens_core::embedding::LabeledSet;
use l3ens_core::heads::{Head, HeadKind};
use l3ens_core::data::TaskKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite differences of `Head::loss` over every parameter.
pub fn finite_difference_gradient(head: &Head, set: &LabeledSet, batch: &[usize], l2: f64, h: f64) -> Vec<f64> {
    let mut probe = head.clone();
    (0..head.param_count())
        .map(|j| {
            let orig = probe.params()[j];
            probe.params_mut()[j] = orig + h;
            let up = probe.loss(set, batch, l2).unwrap();
            probe.params_mut()[j] = orig - h;
            let down = probe.loss(set, batch, l2).unwrap();
            probe.params_mut()[j] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)`, floored at 1e-8 so exact zeros compare cleanly.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// A random small head and batch: dims ≤ 16, batch ≤ 8.
pub fn random_instance(seed: u64, kind: HeadKind, task: TaskKind) -> (Head, LabeledSet, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_dim = rng.random_range(1..=16);
    let out_dim = match task {
        TaskKind::Regression => 1,
        TaskKind::Classification => rng.random_range(2..=6),
    };
    let kind = match kind {
        HeadKind::Linear => HeadKind::Linear,
        HeadKind::Mlp1 { .. } => HeadKind::Mlp1 { hidden: rng.random_range(1..=16) },
    };
    let n = rng.random_range(1..=8);
    let features: Vec<f64> = (0..n * in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets = match task {
        TaskKind::Regression => Targets::Values((0..n).map(|_| rng.random_range(0.0..1.0)).collect()),
        TaskKind::Classification => Targets::Classes((0..n).map(|_| rng.random_range(0..out_dim)).collect()),
    };
    let mut head = Head::init(kind, in_dim, out_dim, task, rng.random()).unwrap();
    // Nonzero biases so every block is exercised.
    for p in head.params_mut().iter_mut() {
        if *p == 0.0 {
            *p = rng.random_range(-0.5..0.5);
        }
    }
    let l2 = if rng.random_bool(0.5) { rng.random_range(0.0..0.1) } else { 0.0 };
    let set = LabeledSet {
        ids: (0..n).map(|i| i.to_string()).collect(),
        dim: in_dim,
        features,
        targets,
    };
    (head, set, l2)
}

/// Aligns a dataset against a hash-encoder source.
pub fn hash_task(dataset: &l3ens_core::data::TaskDataset, dim: usize, seed: u64) -> l3ens_core::continual::PreparedTask {
    let enc = l3ens_core::embedding::HashEncoder::new(dim, seed).unwrap();
    let m = enc.encode_dataset(format!("hash-d{dim}-s{seed}"), dataset).unwrap();
    l3ens_core::continual::PreparedTask::from_dataset(dataset, &m).unwrap()
}

/// Member heads over hash sources, then the 2-member naive ensemble, on the
/// STS-like benchmark. Returns `(member test MSEs, naive test MSE)`.
pub fn sts_direction(seed: u64) -> (Vec<f64>, f64) {
    use l3ens_core::ensemble::combine_predictions;
    use l3ens_core::heads::{score, train_head, TrainConfig};
    let ds = l3ens_core::bench::sts_like(seed, 600);
    let mut member_mse = Vec::new();
    let mut preds = Vec::new();
    let mut targets = None;
    for s in [2 * seed + 100, 2 * seed + 101] {
        let task = hash_task(&ds, 32, s);
        let head = Head::init(HeadKind::Linear, 32, 1, TaskKind::Regression, s).unwrap();
        let (head, _) = train_head(head, &task.train, &task.validation, &TrainConfig::default().with_seed(s)).unwrap();
        member_mse.push(head.evaluate(&task.test).unwrap().value);
        preds.push(head.predict_set(&task.test).unwrap());
        targets = Some(task.test.targets.clone());
    }
    let targets = targets.unwrap();
    let naive = combine_predictions(&preds, None, TaskKind::Regression).unwrap();
    (member_mse, score(&naive, &targets).value)
}

/// Member heads over hash sources and a KI fusion head on the
/// planted-knowledge benchmark. Returns `(member test MSEs, KI test MSE)`.
pub fn ki_direction(seed: u64) -> (Vec<f64>, f64) {
    use l3ens_core::ensemble::{fuse_sets, train_fusion_ensemble};
    use l3ens_core::heads::{train_head, TrainConfig};
    let kb = l3ens_core::bench::toy_kb(seed);
    let ds = l3ens_core::bench::planted_knowledge(seed, 600, &kb);
    let tasks: Vec<_> = [2 * seed + 200, 2 * seed + 201].iter().map(|&s| (s, hash_task(&ds, 32, s))).collect();
    let mut member_mse = Vec::new();
    for (s, task) in &tasks {
        let head = Head::init(HeadKind::Linear, 32, 1, TaskKind::Regression, *s).unwrap();
        let (head, _) = train_head(head, &task.train, &task.validation, &TrainConfig::default().with_seed(*s)).unwrap();
        member_mse.push(head.evaluate(&task.test).unwrap().value);
    }
    let knowledge = |set: &LabeledSet| -> Vec<Vec<f64>> {
        set.ids
            .iter()
            .map(|id| {
                let text = ds.example(id).unwrap().text.joined();
                kb.knowledge_vector(&kb.link_entities(&text)).unwrap()
            })
            .collect()
    };
    let fuse = |pick: fn(&l3ens_core::continual::PreparedTask) -> &LabeledSet| {
        let sets: Vec<&LabeledSet> = tasks.iter().map(|(_, t)| pick(t)).collect();
        fuse_sets(&sets, Some(&knowledge(sets[0]))).unwrap().set
    };
    let (train, val, test) = (fuse(|t| &t.train), fuse(|t| &t.validation), fuse(|t| &t.test));
    let out = train_fusion_ensemble(
        HeadKind::Linear,
        TaskKind::Regression,
        1,
        &train,
        &val,
        &test,
        &TrainConfig::default().with_seed(seed),
    )
    .unwrap();
    (member_mse, out.test_metric.value)
}

/// A random small knowledge base and text over a tiny shared vocabulary, so
/// aliases overlap and collide often.
pub fn random_linking_instance(seed: u64) -> (Vec<l3ens_core::knowledge::Entity>, String) {
    const VOCAB: [&str; 8] = ["red", "fox", "jumps", "over", "lazy", "dog", "blue", "sky"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phrase = |rng: &mut ChaCha8Rng, max: usize| -> String {
        (0..rng.random_range(1..=max))
            .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let entities = (0..rng.random_range(1..=20))
        .map(|i| l3ens_core::knowledge::Entity {
            id: format!("e{i:02}"),
            label: phrase(&mut rng, 3),
            aliases: (0..rng.random_range(0..3)).map(|_| phrase(&mut rng, 3)).collect(),
        })
        .collect();
    let text: Vec<String> = (0..rng.random_range(0..=30))
        .map(|_| {
            let w = VOCAB[rng.random_range(0..VOCAB.len())];
            if rng.random_bool(0.2) { w.to_uppercase() } else { w.to_string() }
        })
        .collect();
    (entities, text.join(if rng.random_bool(0.5) { " " } else { ", " }))
}

pub fn kb_from(entities: Vec<l3ens_core::knowledge::Entity>) -> l3ens_core::knowledge::KnowledgeBase {
    let ids: Vec<String> = entities.iter().map(|e| e.id.clone()).collect();
    let values = (0..ids.len() * 2).map(|i| i as f32).collect();
    let m = l3ens_core::embedding::EmbeddingMatrix::new("kb", 2, ids, values).unwrap();
    l3ens_core::knowledge::KnowledgeBase::new(entities, m).unwrap()
}

/// Every token span matching some alias, then repeated selection of the
/// earliest-starting, longest span not overlapping earlier picks. Returns
/// `(entity id, start, end)`.
pub fn brute_force_link(entities: &[l3ens_core::knowledge::Entity], text: &str) -> Vec<(String, usize, usize)> {
    let norm = |s: &str| -> Vec<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .collect()
    };
    let mut owner: std::collections::HashMap<Vec<String>, String> = Default::default();
    for e in entities {
        for a in std::iter::once(&e.label).chain(&e.aliases) {
            let key = norm(a);
            let slot = owner.entry(key).or_insert_with(|| e.id.clone());
            if e.id < *slot {
                *slot = e.id.clone();
            }
        }
    }
    let tokens = norm(text);
    let mut spans = Vec::new();
    for start in 0..tokens.len() {
        for end in start + 1..=tokens.len() {
            if let Some(id) = owner.get(&tokens[start..end]) {
                spans.push((id.clone(), start, end));
            }
        }
    }
    let mut out = Vec::new();
    let mut cursor = 0;
    loop {
        let next = spans
            .iter()
            .filter(|(_, s, _)| *s >= cursor)
            .min_by_key(|(_, s, e)| (*s, std::cmp::Reverse(*e)));
        match next {
            Some(span) => {
                cursor = span.2;
                out.push(span.clone());
            }
            None => return out,
        }
    }
}

/// The demo directory shipped at the workspace root.
pub fn bundled_demo_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

/// A freshly generated demo in a temporary directory.
pub fn fresh_demo() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    l3ens_core::demo::write_demo(dir.path()).unwrap();
    dir
}

/// `run.json` text with the wall-clock field removed.
pub fn without_wall_clock(run_json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(run_json).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock_seconds");
    v
}

/// A random embedding matrix over arbitrary finite f32 bit patterns
/// (subnormals and signed zeros included). Roughly one in ten has zero
/// rows and one in twenty is 1×1.
pub fn random_matrix(seed: u64) -> l3ens_core::embedding::EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, dim) = match rng.random_range(0..20) {
        0 | 1 => (0, rng.random_range(1..=32)),
        2 => (1, 1),
        _ => (rng.random_range(1..=20), rng.random_range(1..=32)),
    };
    let values = (0..n * dim)
        .map(|_| loop {
            let v = f32::from_bits(rng.random());
            if v.is_finite() {
                break v;
            }
        })
        .collect();
    let ids = (0..n).map(|i| if i % 3 == 0 { format!("é-{i}") } else { format!("row {i}") }).collect();
    l3ens_core::embedding::EmbeddingMatrix::new(format!("m{seed}"), dim, ids, values).unwrap()
}

/// Bitwise equality of shape, ids and values.
pub fn same_bits(a: &l3ens_core::embedding::EmbeddingMatrix, b: &l3ens_core::embedding::EmbeddingMatrix) -> bool {
    a.dim() == b.dim()
        && a.ids() == b.ids()
        && a.values().len() == b.values().len()
        && a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits())
}
