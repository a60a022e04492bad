//! Relation phrase normalization and the phrase-to-KG-relation map.
//!
//! The map is built offline from co-occurrence: whenever a linked candidate
//! fact `(h_k, phrase, t_k)` lines up with an oracle fact `(h_k, r_k, t_k)`,
//! the pair `(phrase, r_k)` gains a count. A reviewer then approves the true
//! mappings on a curation sheet listing the top phrases per relation, and only
//! approved pairs are ever used for mapping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenAnnotation, Upos};
use crate::evalkit::OracleKg;
use crate::tsv::{self, TsvError};

/// POS tags removed from relation phrases before lookup.
pub const DROPPED_POS: [Upos; 5] = [Upos::Aux, Upos::Adj, Upos::Adv, Upos::Det, Upos::Punct];

/// Default review depth per KG relation on the curation sheet.
pub const DEFAULT_REVIEW_DEPTH: usize = 15;

/// Lowercase, space-joined lemmas of the content words of a relation phrase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NormalizedPhrase(String);

impl NormalizedPhrase {
    /// Accepts an already normalized string (non-empty, lowercase, single-spaced).
    pub fn parse(value: &str) -> Result<Self, String> {
        let canonical = value.split_whitespace().collect::<Vec<_>>().join(" ");
        if canonical.is_empty() {
            return Err("normalized phrase must not be empty".into());
        }
        if canonical != value || canonical.to_lowercase() != canonical {
            return Err(format!("{value:?} is not a normalized phrase"));
        }
        Ok(Self(canonical))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl TryFrom<String> for NormalizedPhrase {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::parse(&value)
    }
}

impl From<NormalizedPhrase> for String {
    fn from(p: NormalizedPhrase) -> Self {
        p.0
    }
}

impl fmt::Display for NormalizedPhrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn lemma_words(tok: &TokenAnnotation) -> impl Iterator<Item = String> + '_ {
    let base = if tok.lemma.trim().is_empty() {
        &tok.text
    } else {
        &tok.lemma
    };
    base.split_whitespace().map(str::to_lowercase)
}

/// Drops auxiliaries, adjectives, adverbs, determiners and punctuation, then
/// joins the lowercase lemmas of what remains. A phrase made only of dropped
/// tokens (e.g. a copula) falls back to the lemmas of every token.
pub fn normalize_phrase(tokens: &[TokenAnnotation]) -> Option<NormalizedPhrase> {
    let join = |toks: &mut dyn Iterator<Item = &TokenAnnotation>| -> String {
        toks.flat_map(lemma_words).collect::<Vec<_>>().join(" ")
    };
    let kept = join(&mut tokens.iter().filter(|t| !DROPPED_POS.contains(&t.pos)));
    let value = if kept.is_empty() {
        join(&mut tokens.iter())
    } else {
        kept
    };
    (!value.is_empty()).then_some(NormalizedPhrase(value))
}

/// How co-occurrences are counted while building the map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// One count per linked fact.
    #[default]
    PerFact,
    /// One count per distinct linked `(h_k, t_k)` pair.
    PerPair,
}

/// One linked fact as seen by the map builder.
#[derive(Debug, Clone, Copy)]
pub struct PhraseObservation<'a> {
    pub phrase: &'a str,
    pub head_entity: Option<&'a str>,
    pub tail_entity: Option<&'a str>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationMap {
    counts: BTreeMap<(String, String), u64>,
    curated: BTreeSet<(String, String)>,
}

/// One row of the curation sheet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurationRow {
    pub phrase: String,
    pub kg_relation: String,
    pub count: u64,
    pub approved: bool,
}

/// Co-occurrence counts between linked candidate facts and oracle facts.
pub fn build_relation_map<'a, I>(observations: I, oracle: &OracleKg, mode: CountMode) -> RelationMap
where
    I: IntoIterator<Item = PhraseObservation<'a>>,
{
    let mut per_fact: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut per_pair: BTreeMap<(String, String), BTreeSet<(&'a str, &'a str)>> = BTreeMap::new();
    for obs in observations {
        let (Some(h), Some(t)) = (obs.head_entity, obs.tail_entity) else {
            continue;
        };
        for rel in oracle.relations_between(h, t) {
            let key = (obs.phrase.to_string(), rel.to_string());
            match mode {
                CountMode::PerFact => *per_fact.entry(key).or_insert(0) += 1,
                CountMode::PerPair => {
                    per_pair.entry(key).or_default().insert((h, t));
                }
            }
        }
    }
    let counts = match mode {
        CountMode::PerFact => per_fact,
        CountMode::PerPair => per_pair
            .into_iter()
            .map(|(k, pairs)| (k, pairs.len() as u64))
            .collect(),
    };
    RelationMap {
        counts,
        curated: BTreeSet::new(),
    }
}

impl RelationMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, phrase: &str, kg_relation: &str) -> u64 {
        self.counts
            .get(&(phrase.to_string(), kg_relation.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<(String, String), u64> {
        &self.counts
    }

    pub fn curated(&self) -> &BTreeSet<(String, String)> {
        &self.curated
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Adds counts from another partial map (per-fact counts are a sum monoid).
    pub fn merge_counts(&mut self, other: &RelationMap) {
        for (k, c) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += c;
        }
    }

    pub fn kg_relations(&self) -> BTreeSet<&str> {
        self.counts.keys().map(|(_, r)| r.as_str()).collect()
    }

    /// Marks pairs as approved. Pairs without counts are ignored so the curated
    /// set stays a subset of the counted pairs; the number ignored is returned.
    pub fn approve<'a, I>(&mut self, pairs: I) -> usize
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut ignored = 0;
        for (phrase, rel) in pairs {
            let key = (phrase.to_string(), rel.to_string());
            if self.counts.contains_key(&key) {
                self.curated.insert(key);
            } else {
                ignored += 1;
            }
        }
        ignored
    }

    /// Loads the approved rows of a curation sheet.
    pub fn apply_curation(&mut self, rows: &[CurationRow]) -> usize {
        self.approve(
            rows.iter()
                .filter(|r| r.approved)
                .map(|r| (r.phrase.as_str(), r.kg_relation.as_str())),
        )
    }

    /// A map whose counts and approvals both come from a curation sheet.
    pub fn from_curation(rows: &[CurationRow]) -> Self {
        let mut map = RelationMap::new();
        for r in rows {
            if r.count > 0 {
                map.counts
                    .insert((r.phrase.clone(), r.kg_relation.clone()), r.count);
            }
        }
        map.apply_curation(rows);
        map
    }

    /// Writes `phrase \t kg_relation \t count`.
    pub fn write_counts<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for ((phrase, rel), count) in &self.counts {
            writeln!(sink, "{}\t{}\t{count}", tsv::clean(phrase), tsv::clean(rel))?;
        }
        sink.flush()
    }

    pub fn read_counts<R: BufRead>(input: R) -> Result<Self, TsvError> {
        let mut map = RelationMap::new();
        for row in tsv::rows(input, 3) {
            let row = row?;
            let count: u64 = row.parse(2)?;
            *map.counts
                .entry((row.fields[0].clone(), row.fields[1].clone()))
                .or_insert(0) += count;
        }
        map.counts.retain(|_, c| *c > 0);
        Ok(map)
    }

    /// Review sheet with the top `n` phrases for every KG relation. Already
    /// curated pairs are pre-approved.
    pub fn curation_sheet(&self, n: usize) -> Vec<CurationRow> {
        let mut rows = Vec::new();
        for rel in self.kg_relations() {
            for phrase in rank_phrases(self, rel, n) {
                let key = (phrase.clone(), rel.to_string());
                rows.push(CurationRow {
                    count: self.counts[&key],
                    approved: self.curated.contains(&key),
                    phrase,
                    kg_relation: rel.to_string(),
                });
            }
        }
        rows
    }
}

pub fn write_curation_sheet<W: Write>(rows: &[CurationRow], mut sink: W) -> std::io::Result<()> {
    for r in rows {
        writeln!(
            sink,
            "{}\t{}\t{}\t{}",
            tsv::clean(&r.phrase),
            tsv::clean(&r.kg_relation),
            r.count,
            u8::from(r.approved)
        )?;
    }
    sink.flush()
}

pub fn read_curation_sheet<R: BufRead>(input: R) -> Result<Vec<CurationRow>, TsvError> {
    let mut out = Vec::new();
    for row in tsv::rows(input, 4) {
        let row = row?;
        let approved = match row.fields[3].trim() {
            "1" => true,
            "0" | "" => false,
            other => {
                return Err(TsvError::BadField {
                    line: row.line,
                    field: 3,
                    value: other.to_string(),
                })
            }
        };
        out.push(CurationRow {
            phrase: row.fields[0].clone(),
            kg_relation: row.fields[1].clone(),
            count: row.parse(2)?,
            approved,
        });
    }
    Ok(out)
}

/// Top `n` phrases for a KG relation by count, ties broken lexicographically.
pub fn rank_phrases(map: &RelationMap, kg_relation: &str, n: usize) -> Vec<String> {
    let mut ranked: Vec<(&str, u64)> = map
        .counts
        .iter()
        .filter(|((_, r), _)| r == kg_relation)
        .map(|((p, _), c)| (p.as_str(), *c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(n)
        .map(|(p, _)| p.to_string())
        .collect()
}

/// The approved KG relation with the highest count for this phrase, if any.
pub fn map_relation(phrase: &str, map: &RelationMap) -> Option<String> {
    map.curated
        .iter()
        .filter(|(p, _)| p == phrase)
        .map(|key| (map.counts.get(key).copied().unwrap_or(0), key.1.as_str()))
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(a.1)))
        .map(|(_, rel)| rel.to_string())
}
