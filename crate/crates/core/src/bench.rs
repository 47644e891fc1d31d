//! Synthetic benchmarks used by the demo, the tests, and the acceptance suite.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::continual::PreparedTask;
use crate::data::{Example, TaskDataset, TaskKind, Targets, TextFields};
use crate::embedding::{EmbeddingMatrix, LabeledSet};
use crate::knowledge::{Entity, KnowledgeBase};
use crate::text::tokenize;

/// Split sizes for synthetic feature tasks.
#[derive(Debug, Clone, Copy)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 400,
            validation: 100,
            test: 200,
        }
    }
}

fn gaussian_row(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn binary_set(prefix: &str, rows: Vec<Vec<f64>>, label: impl Fn(&[f64]) -> usize) -> LabeledSet {
    let dim = rows.first().map_or(0, Vec::len);
    let classes = rows.iter().map(|r| label(r)).collect();
    LabeledSet {
        ids: (0..rows.len()).map(|i| format!("{prefix}-{i}")).collect(),
        dim,
        features: rows.into_iter().flatten().collect(),
        targets: Targets::Classes(classes),
    }
}

fn binary_task(
    name: &str,
    rng: &mut ChaCha8Rng,
    dim: usize,
    sizes: SplitSizes,
    sample: impl Fn(&mut ChaCha8Rng) -> Vec<f64>,
    label: impl Fn(&[f64]) -> usize + Copy,
) -> PreparedTask {
    let mut draw = |n: usize, split: &str| {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| sample(rng)).collect();
        debug_assert!(rows.iter().all(|r| r.len() == dim));
        binary_set(&format!("{name}-{split}"), rows, label)
    };
    let train = draw(sizes.train, "train");
    let validation = draw(sizes.validation, "validation");
    let test = draw(sizes.test, "test");
    PreparedTask {
        name: name.to_string(),
        task_kind: TaskKind::Classification,
        num_classes: Some(2),
        train,
        validation,
        test,
    }
}

/// Two binary tasks on standard Gaussian features whose decision directions
/// are orthogonal: `ortho-a` labels by `x0 > 0`, `ortho-b` by `x1 > 0`.
pub fn orthogonal_tasks(seed: u64, dim: usize, sizes: SplitSizes) -> [PreparedTask; 2] {
    assert!(dim >= 2, "orthogonal tasks need at least two dimensions");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = binary_task(
        "ortho-a",
        &mut rng,
        dim,
        sizes,
        |r| gaussian_row(r, dim),
        |x| usize::from(x[0] > 0.0),
    );
    let b = binary_task(
        "ortho-b",
        &mut rng,
        dim,
        sizes,
        |r| gaussian_row(r, dim),
        |x| usize::from(x[1] > 0.0),
    );
    [a, b]
}

/// Two binary tasks sharing the rule `x0 > 0`. `nested-narrow` only draws
/// points with `|x0| > 1`; `nested-wide` draws from the full Gaussian, so its
/// support contains the narrow task's.
pub fn nested_tasks(seed: u64, dim: usize, sizes: SplitSizes) -> [PreparedTask; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let narrow = binary_task(
        "nested-narrow",
        &mut rng,
        dim,
        sizes,
        |r| loop {
            let x = gaussian_row(r, dim);
            if x[0].abs() > 1.0 {
                break x;
            }
        },
        |x| usize::from(x[0] > 0.0),
    );
    let wide = binary_task(
        "nested-wide",
        &mut rng,
        dim,
        sizes,
        |r| gaussian_row(r, dim),
        |x| usize::from(x[0] > 0.0),
    );
    [narrow, wide]
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ru", "ten", "sa", "vo", "ne", "dri", "pa", "xu", "bel", "fo", "qi", "zan", "te", "gu", "hy",
    "jor", "wim", "ce", "dul", "ob", "sy",
];

/// `n` distinct pseudo-words, none of which is in `exclude`.
pub fn pseudo_words(rng: &mut ChaCha8Rng, n: usize, exclude: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.random_range(2..=3);
        let w: String = (0..k).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
        if !out.contains(&w) && !exclude.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn split_dataset(
    name: &str,
    kind: TaskKind,
    num_classes: Option<usize>,
    examples: Vec<Example>,
    rng: &mut ChaCha8Rng,
) -> TaskDataset {
    let mut ids: Vec<String> = examples.iter().map(|e| e.id.clone()).collect();
    ids.shuffle(rng);
    let n_train = ids.len() * 70 / 100;
    let n_val = ids.len() * 15 / 100;
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    TaskDataset::new(name, kind, num_classes, examples, ids, validation, test).expect("synthetic dataset is valid")
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sentence pairs with graded similarity-style scores in `[0, 1]`.
///
/// Each of 300 pseudo-words carries a hidden Gaussian weight; a pair's score
/// is `sigmoid(1.5 · Σw / √len)` over both sentences, plus small noise.
pub fn sts_like(seed: u64, n: usize) -> TaskDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = pseudo_words(&mut rng, 300, &[]);
    let weights: Vec<f64> = (0..vocab.len()).map(|_| rng.sample(StandardNormal)).collect();
    let sentence = |rng: &mut ChaCha8Rng| -> (String, f64, usize) {
        let len = rng.random_range(5..=10);
        let picks: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab.len())).collect();
        let text = picks.iter().map(|&i| vocab[i].as_str()).collect::<Vec<_>>().join(" ");
        (text, picks.iter().map(|&i| weights[i]).sum(), len)
    };
    let examples = (0..n)
        .map(|i| {
            let (a, wa, la) = sentence(&mut rng);
            let (b, wb, lb) = sentence(&mut rng);
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.02;
            let score = (sigmoid(1.5 * (wa + wb) / ((la + lb) as f64).sqrt()) + noise).clamp(0.0, 1.0);
            Example {
                id: format!("sts-{i:04}"),
                text: TextFields::Pair(a, b),
                label: score,
            }
        })
        .collect();
    split_dataset("sts-like", TaskKind::Regression, None, examples, &mut rng)
}

/// Binary topic task: label 1 when the text contains one of the task's 22
/// keywords. Tasks built from different `seed`s over the same `vocab_seed`
/// share a vocabulary but not a keyword set.
pub fn keyword_task(name: &str, vocab_seed: u64, seed: u64, n: usize) -> TaskDataset {
    let mut vocab_rng = ChaCha8Rng::seed_from_u64(vocab_seed);
    let vocab = pseudo_words(&mut vocab_rng, 200, &[]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = vocab.clone();
    shuffled.shuffle(&mut rng);
    let keywords = &shuffled[..22];
    let examples = (0..n)
        .map(|i| {
            let words: Vec<&str> = (0..6).map(|_| vocab[rng.random_range(0..vocab.len())].as_str()).collect();
            let label = words.iter().any(|w| keywords.iter().any(|k| k == w));
            Example {
                id: format!("{name}-{i:04}"),
                text: TextFields::Single(words.join(" ")),
                label: f64::from(u8::from(label)),
            }
        })
        .collect();
    split_dataset(name, TaskKind::Classification, Some(2), examples, &mut rng)
}

/// Entities of the bundled toy knowledge base: `(id, label, aliases)`.
pub const TOY_ENTITIES: [(&str, &str, &[&str]); 50] = [
    ("E01", "Paris", &["city of light"]),
    ("E02", "London", &[]),
    ("E03", "Berlin", &[]),
    ("E04", "Tokyo", &[]),
    ("E05", "New York City", &["new york", "nyc", "big apple"]),
    ("E06", "York", &[]),
    ("E07", "Eiffel Tower", &[]),
    ("E08", "Statue of Liberty", &[]),
    ("E09", "Great Wall of China", &["great wall"]),
    ("E10", "Mount Everest", &["everest"]),
    ("E11", "Amazon River", &["amazon"]),
    ("E12", "Sahara Desert", &["sahara"]),
    ("E13", "Pacific Ocean", &["pacific"]),
    ("E14", "Albert Einstein", &["einstein"]),
    ("E15", "Marie Curie", &["curie"]),
    ("E16", "Isaac Newton", &["newton"]),
    ("E17", "Charles Darwin", &["darwin"]),
    ("E18", "Ada Lovelace", &["lovelace"]),
    ("E19", "Alan Turing", &["turing"]),
    ("E20", "William Shakespeare", &["shakespeare", "the bard"]),
    ("E21", "Leonardo da Vinci", &["da vinci"]),
    ("E22", "Wolfgang Amadeus Mozart", &["mozart"]),
    ("E23", "Ludwig van Beethoven", &["beethoven"]),
    ("E24", "Pablo Picasso", &["picasso"]),
    ("E25", "United Nations", &[]),
    ("E26", "European Union", &[]),
    ("E27", "World Health Organization", &[]),
    ("E28", "Olympic Games", &["olympics"]),
    ("E29", "Nobel Prize", &["nobel"]),
    ("E30", "Internet", &["world wide web"]),
    ("E31", "Python", &[]),
    ("E32", "Linux", &[]),
    ("E33", "Wikipedia", &[]),
    ("E34", "Moon", &[]),
    ("E35", "Mars", &["red planet"]),
    ("E36", "Jupiter", &[]),
    ("E37", "Sun", &[]),
    ("E38", "Milky Way", &[]),
    ("E39", "Black Hole", &[]),
    ("E40", "Photosynthesis", &[]),
    ("E41", "Democracy", &[]),
    ("E42", "Renaissance", &[]),
    ("E43", "Industrial Revolution", &[]),
    ("E44", "World War II", &["second world war"]),
    ("E45", "Roman Empire", &["rome"]),
    ("E46", "Ancient Egypt", &["egypt"]),
    ("E47", "Pyramids of Giza", &["pyramids", "giza"]),
    ("E48", "Football", &["soccer"]),
    ("E49", "Chess", &[]),
    ("E50", "Coffee", &[]),
];

/// Dimensionality of the toy knowledge base vectors.
pub const TOY_KB_DIM: usize = 16;

pub fn toy_entities() -> Vec<Entity> {
    TOY_ENTITIES
        .iter()
        .map(|(id, label, aliases)| Entity {
            id: id.to_string(),
            label: label.to_string(),
            aliases: aliases.iter().map(|a| a.to_string()).collect(),
        })
        .collect()
}

/// The toy entities with standard Gaussian vectors drawn from `seed`.
pub fn toy_kb(seed: u64) -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entities = toy_entities();
    let ids: Vec<String> = entities.iter().map(|e| e.id.clone()).collect();
    let values: Vec<f32> = (0..ids.len() * TOY_KB_DIM)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    let vectors = EmbeddingMatrix::new("toy-kb", TOY_KB_DIM, ids, values).expect("toy kb shape");
    KnowledgeBase::new(entities, vectors).expect("toy kb is consistent")
}

/// Short texts mixing filler pseudo-words with 1–3 entity surface forms.
///
/// The label is `0.5 + 0.5 · (k̂ · u)`, where `k̂` is the L2-normalized mean of
/// the linked entity vectors and `u` a hidden unit vector, so it is an exact
/// linear function of the knowledge segment a fused representation carries.
pub fn planted_knowledge(seed: u64, n: usize, kb: &KnowledgeBase) -> TaskDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alias_tokens: Vec<String> = kb
        .entities()
        .flat_map(|e| std::iter::once(&e.label).chain(&e.aliases))
        .flat_map(|a| tokenize(a))
        .collect();
    let filler = pseudo_words(&mut rng, 120, &alias_tokens);
    let surfaces: Vec<String> = kb
        .entities()
        .flat_map(|e| std::iter::once(e.label.clone()).chain(e.aliases.iter().cloned()))
        .collect();
    let mut u: Vec<f64> = gaussian_row(&mut rng, kb.dim());
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= norm);

    let mut examples = Vec::with_capacity(n);
    while examples.len() < n {
        let mut words: Vec<String> = (0..rng.random_range(4..=8))
            .map(|_| filler[rng.random_range(0..filler.len())].clone())
            .collect();
        for _ in 0..rng.random_range(1..=3) {
            let at = rng.random_range(0..=words.len());
            words.insert(at, surfaces[rng.random_range(0..surfaces.len())].clone());
        }
        let text = words.join(" ");
        let k = kb.knowledge_vector(&kb.link_entities(&text)).expect("kb entities");
        let kn = k.iter().map(|x| x * x).sum::<f64>().sqrt();
        if kn == 0.0 {
            continue;
        }
        let dot: f64 = k.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / kn;
        examples.push(Example {
            id: format!("kn-{:04}", examples.len()),
            text: TextFields::Single(text),
            label: (0.5 + 0.5 * dot).clamp(0.0, 1.0),
        });
    }
    split_dataset("planted-knowledge", TaskKind::Regression, None, examples, &mut rng)
}
