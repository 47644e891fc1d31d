//! Knowledge-infusion inputs: a base of entity surface forms and vectors,
//! greedy longest-match linking, and mean pooling of linked entity vectors.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embedding::{load_embeddings, EmbeddingError, EmbeddingMatrix};
use crate::text::{tokenize, tokenize_with_spans};

#[derive(Debug, Error)]
pub enum KnowledgeError {
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
    #[error(transparent)]
    Vectors(#[from] EmbeddingError),
    #[error("entities without a vector row: {}", .0.join(", "))]
    OrphanEntity(Vec<String>),
    #[error("entity {0:?} listed twice")]
    DuplicateEntity(String),
    #[error("entity {entity:?} has an alias with no word characters: {alias:?}")]
    EmptyAlias { entity: String, alias: String },
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub label: String,
    pub aliases: Vec<String>,
}

/// A linked span: tokens `start..end` of the text, matching `entity_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMention {
    pub entity_id: String,
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

/// Entities with case-insensitive aliases and one vector per entity.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    entities: BTreeMap<String, Entity>,
    vectors: EmbeddingMatrix,
    /// Normalized alias (tokens joined by one space) → entity id.
    aliases: HashMap<String, String>,
    max_alias_tokens: usize,
    warnings: Vec<String>,
}

fn normalize_alias(alias: &str) -> String {
    tokenize(alias).join(" ")
}

impl KnowledgeBase {
    /// Builds the alias index. Each entity's canonical label is also an alias.
    /// An alias claimed by two entities goes to the lexicographically smaller
    /// id and leaves a warning.
    pub fn new(entities: Vec<Entity>, vectors: EmbeddingMatrix) -> Result<Self, KnowledgeError> {
        let orphans: Vec<String> = entities
            .iter()
            .filter(|e| !vectors.contains(&e.id))
            .map(|e| e.id.clone())
            .collect();
        if !orphans.is_empty() {
            return Err(KnowledgeError::OrphanEntity(orphans));
        }
        let mut by_id = BTreeMap::new();
        for e in entities {
            if by_id.contains_key(&e.id) {
                return Err(KnowledgeError::DuplicateEntity(e.id));
            }
            by_id.insert(e.id.clone(), e);
        }

        let mut aliases: HashMap<String, String> = HashMap::new();
        let mut warnings = Vec::new();
        let mut max_alias_tokens = 0;
        // BTreeMap iteration is id-ordered, so the first claimant is the smallest id.
        for e in by_id.values() {
            for raw in std::iter::once(&e.label).chain(&e.aliases) {
                let key = normalize_alias(raw);
                if key.is_empty() {
                    return Err(KnowledgeError::EmptyAlias {
                        entity: e.id.clone(),
                        alias: raw.clone(),
                    });
                }
                max_alias_tokens = max_alias_tokens.max(key.split(' ').count());
                match aliases.get(&key) {
                    Some(owner) if *owner != e.id => warnings.push(format!(
                        "alias {key:?} claimed by {owner} and {}; keeping {owner}",
                        e.id
                    )),
                    Some(_) => {}
                    None => {
                        aliases.insert(key, e.id.clone());
                    }
                }
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(Self {
            entities: by_id,
            vectors,
            aliases,
            max_alias_tokens,
            warnings,
        })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.entities.get(id)?;
        self.vectors.row_by_id(id)
    }

    /// Entity id owning a normalized alias.
    pub fn resolve_alias(&self, alias: &str) -> Option<&str> {
        self.aliases.get(&normalize_alias(alias)).map(String::as_str)
    }

    pub fn max_alias_tokens(&self) -> usize {
        self.max_alias_tokens
    }

    /// Greedy longest match, left to right: at each position try the longest
    /// alias first; a match consumes its tokens.
    pub fn link_entities(&self, text: &str) -> Vec<EntityMention> {
        let tokens = tokenize_with_spans(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = self.max_alias_tokens.min(tokens.len() - i);
            let hit = (1..=longest).rev().find_map(|len| {
                let key = tokens[i..i + len]
                    .iter()
                    .map(|(t, _)| t.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                self.aliases.get(&key).map(|id| (len, id))
            });
            match hit {
                Some((len, id)) => {
                    let bytes = tokens[i].1.start..tokens[i + len - 1].1.end;
                    out.push(EntityMention {
                        entity_id: id.clone(),
                        surface: text[bytes].to_string(),
                        start: i,
                        end: i + len,
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }

    /// Mean of the mentioned entities' vectors; zero vector when empty.
    pub fn knowledge_vector(&self, mentions: &[EntityMention]) -> Result<Vec<f64>, KnowledgeError> {
        let mut acc = vec![0.0; self.dim()];
        for m in mentions {
            let row = self
                .vector(&m.entity_id)
                .ok_or_else(|| KnowledgeError::UnknownEntity(m.entity_id.clone()))?;
            for (a, v) in acc.iter_mut().zip(row) {
                *a += f64::from(*v);
            }
        }
        if !mentions.is_empty() {
            let n = mentions.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        Ok(acc)
    }
}

/// Parses `entity_id <TAB> canonical_label <TAB> alias1|alias2|…` rows.
///
/// Blank lines and lines starting with `#` are skipped; the alias column may
/// be empty or absent.
pub fn parse_labels(path: &Path, content: &str) -> Result<Vec<Entity>, KnowledgeError> {
    let mut out = Vec::new();
    for (n, line) in content.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 || cols[0].trim().is_empty() {
            return Err(KnowledgeError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected 2 or 3 tab-separated columns, got {}", cols.len()),
            });
        }
        let aliases = cols
            .get(2)
            .map(|a| {
                a.split('|')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            })
            .unwrap_or_default();
        out.push(Entity {
            id: cols[0].trim().to_string(),
            label: cols[1].trim().to_string(),
            aliases,
        });
    }
    Ok(out)
}

pub fn load_kb(labels_path: &Path, vectors_path: &Path) -> Result<KnowledgeBase, KnowledgeError> {
    let content = fs::read_to_string(labels_path).map_err(|source| KnowledgeError::Io {
        path: labels_path.to_path_buf(),
        source,
    })?;
    let entities = parse_labels(labels_path, &content)?;
    let vectors = load_embeddings(vectors_path)?;
    KnowledgeBase::new(entities, vectors)
}
