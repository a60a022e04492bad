//! Entity linking: mention-to-entity dictionary plus word-vector context
//! disambiguation.
//!
//! Candidates for a chunk come from the dictionary entry of its normalized
//! mention. Each candidate is scored by `prior * max(0, cos(context, label))`
//! where `context` is the mean vector of the sentence tokens outside the chunk
//! and `label` the mean vector of the entity label tokens. Only candidates whose
//! similarity clears the link threshold are eligible.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{NounChunk, SentenceRecord, Upos};
use crate::scalar::{cmp_desc, Scalar};
use crate::tsv::{self, TsvError};

pub const DEFAULT_LINK_THRESHOLD: f64 = 0.25;

const DETERMINERS: [&str; 3] = ["a", "an", "the"];
const BARE_PRONOUNS: [&str; 4] = ["he", "she", "it", "they"];

#[derive(Debug, Error)]
pub enum LinkerError {
    #[error("line {line}: vector has dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Tsv(#[from] TsvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Case-folds, collapses whitespace and strips one leading determiner.
pub fn normalize_mention(surface: &str) -> String {
    let lower = surface.to_lowercase();
    let mut words: Vec<&str> = lower.split_whitespace().collect();
    if words.len() > 1 && DETERMINERS.contains(&words[0]) {
        words.remove(0);
    }
    words.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCandidate<S> {
    pub entity_id: String,
    pub prior: S,
}

/// Normalized mention -> candidates sorted by descending prior.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MentionDictionary<S> {
    entries: HashMap<String, Vec<EntityCandidate<S>>>,
}

impl<S: Scalar> MentionDictionary<S> {
    /// Builds a dictionary from `(mention, entity_id, prior)` rows. Duplicate
    /// entities under one mention keep their highest prior; entry order does not
    /// depend on row order.
    pub fn from_rows<I>(rows: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = (String, String, S)>,
    {
        let mut entries: HashMap<String, HashMap<String, S>> = HashMap::new();
        for (mention, entity, prior) in rows {
            if !prior.is_finite() || prior <= S::zero() {
                return Err(format!(
                    "prior for {mention:?} -> {entity} must be positive"
                ));
            }
            let slot = entries
                .entry(normalize_mention(&mention))
                .or_default()
                .entry(entity)
                .or_insert(prior);
            *slot = slot.max(prior);
        }
        let entries = entries
            .into_iter()
            .map(|(m, ents)| {
                let mut v: Vec<_> = ents
                    .into_iter()
                    .map(|(entity_id, prior)| EntityCandidate { entity_id, prior })
                    .collect();
                v.sort_by(|a, b| cmp_desc(a.prior, b.prior).then(a.entity_id.cmp(&b.entity_id)));
                (m, v)
            })
            .collect();
        Ok(Self { entries })
    }

    /// Reads `mention \t entity_id \t prior` lines.
    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, LinkerError> {
        let mut rows = Vec::new();
        let mut last_line = 0;
        for row in tsv::rows(input, 3) {
            let row = row?;
            last_line = row.line;
            let prior: f64 = row.parse(2)?;
            rows.push((
                row.fields[0].clone(),
                row.fields[1].trim().to_string(),
                S::lit(prior),
            ));
        }
        Self::from_rows(rows).map_err(|message| LinkerError::Parse {
            line: last_line,
            message,
        })
    }

    pub fn candidates(&self, normalized_mention: &str) -> &[EntityCandidate<S>] {
        self.entries
            .get(normalized_mention)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Word vectors of a fixed dimension, keyed by case-folded token.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors<S> {
    dim: usize,
    vectors: HashMap<String, Vec<S>>,
}

impl<S: Scalar> WordVectors<S> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    /// Inserts a vector; the first occurrence of a case-folded token wins.
    pub fn insert(&mut self, token: &str, vector: Vec<S>) -> Result<(), LinkerError> {
        if vector.len() != self.dim {
            return Err(LinkerError::DimensionMismatch {
                line: 0,
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.vectors.entry(token.to_lowercase()).or_insert(vector);
        Ok(())
    }

    /// Reads the `token v1 ... vd` text format. A leading `count dim` header
    /// line is accepted and skipped.
    pub fn read_text<R: BufRead>(input: R) -> Result<Self, LinkerError> {
        let mut out: Option<WordVectors<S>> = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            if line_no == 1 && rest.len() == 1 && token.parse::<usize>().is_ok() {
                if let Ok(dim) = rest[0].parse::<usize>() {
                    out = Some(WordVectors::new(dim));
                    continue;
                }
            }
            let vector = rest
                .iter()
                .map(|v| v.parse::<f64>().map(S::lit))
                .collect::<Result<Vec<S>, _>>()
                .map_err(|e| LinkerError::Parse {
                    line: line_no,
                    message: format!("bad vector component: {e}"),
                })?;
            let vecs = out.get_or_insert_with(|| WordVectors::new(vector.len()));
            if vector.len() != vecs.dim || vector.is_empty() {
                return Err(LinkerError::DimensionMismatch {
                    line: line_no,
                    expected: vecs.dim,
                    found: vector.len(),
                });
            }
            vecs.vectors.entry(token.to_lowercase()).or_insert(vector);
        }
        Ok(out.unwrap_or_else(|| WordVectors::new(0)))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[S]> {
        self.vectors.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    /// Mean of the in-vocabulary tokens, or `None` if none are known.
    pub fn mean<'a, I: IntoIterator<Item = &'a str>>(&self, tokens: I) -> Option<Vec<S>> {
        let mut acc = vec![S::zero(); self.dim];
        let mut n = 0usize;
        for tok in tokens {
            if let Some(v) = self.get(tok) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a = *a + *x;
                }
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        let n = S::from_usize(n).expect("count");
        Some(acc.into_iter().map(|a| a / n).collect())
    }

    /// Multiplies every vector by `c`.
    pub fn scaled(&self, c: S) -> Self {
        Self {
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| *x * c).collect()))
                .collect(),
        }
    }
}

pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> S {
    let dot: S = a.iter().zip(b).map(|(x, y)| *x * *y).sum();
    let na: S = a.iter().map(|x| *x * *x).sum::<S>().sqrt();
    let nb: S = b.iter().map(|x| *x * *x).sum::<S>().sqrt();
    if na == S::zero() || nb == S::zero() {
        return S::zero();
    }
    (dot / (na * nb)).max(-S::one()).min(S::one())
}

/// Cosine between the mean context vector and the mean label vector; 0 when
/// either side has no in-vocabulary token.
pub fn context_similarity<'a, S, C, L>(context: C, label: L, vectors: &WordVectors<S>) -> S
where
    S: Scalar,
    C: IntoIterator<Item = &'a str>,
    L: IntoIterator<Item = &'a str>,
{
    match (vectors.mean(context), vectors.mean(label)) {
        (Some(c), Some(l)) => cosine(&c, &l),
        _ => S::zero(),
    }
}

/// Entity id -> label tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityLabels {
    labels: HashMap<String, Vec<String>>,
}

impl EntityLabels {
    pub fn tokenize(label: &str) -> Vec<String> {
        label
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect()
    }

    pub fn insert(&mut self, entity_id: &str, label: &str) {
        self.labels
            .entry(entity_id.to_string())
            .or_insert_with(|| Self::tokenize(label));
    }

    /// Reads `entity_id \t label` lines.
    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, TsvError> {
        let mut out = Self::default();
        for row in tsv::rows(input, 2) {
            let row = row?;
            out.insert(row.fields[0].trim(), &row.fields[1]);
        }
        Ok(out)
    }

    pub fn tokens(&self, entity_id: &str) -> &[String] {
        self.labels.get(entity_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityLink<S> {
    pub entity_id: String,
    pub prior: S,
    pub context_sim: S,
    pub score: S,
}

/// Frozen linking resources shared by every worker.
#[derive(Debug, Clone)]
pub struct Linker<S> {
    pub dictionary: MentionDictionary<S>,
    pub vectors: WordVectors<S>,
    pub labels: EntityLabels,
    pub threshold: S,
}

impl<S: Scalar> Linker<S> {
    pub fn link(&self, chunk: &NounChunk, record: &SentenceRecord<S>) -> Option<EntityLink<S>> {
        link_mention(
            chunk,
            record,
            &self.dictionary,
            &self.vectors,
            &self.labels,
            self.threshold,
        )
    }
}

fn is_bare_pronoun<S>(chunk: &NounChunk, record: &SentenceRecord<S>, mention: &str) -> bool {
    BARE_PRONOUNS.contains(&mention)
        || (chunk.first_token == chunk.last_token
            && record
                .tokens
                .get(chunk.first_token)
                .is_some_and(|t| t.pos == Upos::Pron))
}

/// Links a chunk to the best-scoring dictionary candidate whose context
/// similarity is at least `threshold`.
pub fn link_mention<S: Scalar>(
    chunk: &NounChunk,
    record: &SentenceRecord<S>,
    dict: &MentionDictionary<S>,
    vectors: &WordVectors<S>,
    labels: &EntityLabels,
    threshold: S,
) -> Option<EntityLink<S>> {
    let mention = match &chunk.resolved_surface {
        Some(resolved) => normalize_mention(resolved),
        None => {
            let m = normalize_mention(&chunk.surface);
            if is_bare_pronoun(chunk, record, &m) {
                return None;
            }
            m
        }
    };
    let candidates = dict.candidates(&mention);
    if candidates.is_empty() {
        return None;
    }
    let context: Vec<&str> = record
        .tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| !chunk.contains(*i))
        .map(|(_, t)| t.text.as_str())
        .collect();
    let context_mean = vectors.mean(context.iter().copied());

    candidates
        .iter()
        .filter_map(|cand| {
            let label = labels.tokens(&cand.entity_id);
            let context_sim = match (
                &context_mean,
                vectors.mean(label.iter().map(String::as_str)),
            ) {
                (Some(c), Some(l)) => cosine(c, &l),
                _ => S::zero(),
            };
            (context_sim >= threshold).then(|| EntityLink {
                entity_id: cand.entity_id.clone(),
                prior: cand.prior,
                context_sim,
                score: cand.prior * context_sim.max(S::zero()),
            })
        })
        .min_by(|a, b| {
            cmp_desc(a.score, b.score)
                .then(cmp_desc(a.prior, b.prior))
                .then(a.entity_id.cmp(&b.entity_id))
        })
}
