//! Open knowledge graph assembly and export.
//!
//! Every kept fact becomes one [`OpenFact`] categorized by how much of it maps
//! onto the reference schema: fully mapped, partially unmapped (at least one of
//! head, relation and tail mapped), or completely unmapped.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::linker::{normalize_mention, EntityLink};
use crate::matcher::CandidateFact;
use crate::relmap::{map_relation, normalize_phrase, NormalizedPhrase, RelationMap};
use crate::scalar::{cmp_desc, Scalar};
use crate::tsv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Mapped,
    PartiallyUnmapped,
    CompletelyUnmapped,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::Mapped,
        Category::PartiallyUnmapped,
        Category::CompletelyUnmapped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Mapped => "mapped",
            Category::PartiallyUnmapped => "partially_unmapped",
            Category::CompletelyUnmapped => "completely_unmapped",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify(head_linked: bool, relation_mapped: bool, tail_linked: bool) -> Category {
    match (head_linked, relation_mapped, tail_linked) {
        (true, true, true) => Category::Mapped,
        (false, false, false) => Category::CompletelyUnmapped,
        _ => Category::PartiallyUnmapped,
    }
}

/// A candidate fact after linking and relation mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedFact<S> {
    pub fact: CandidateFact<S>,
    pub relation_normalized: NormalizedPhrase,
    #[serde(default)]
    pub head_link: Option<EntityLink<S>>,
    #[serde(default)]
    pub tail_link: Option<EntityLink<S>>,
    #[serde(default)]
    pub relation_kg: Option<String>,
}

impl<S: Scalar> LinkedFact<S> {
    /// `None` when the relation has no normalizable tokens.
    pub fn new(fact: CandidateFact<S>) -> Option<Self> {
        let relation_normalized = normalize_phrase(&fact.relation_tokens)?;
        Some(Self {
            fact,
            relation_normalized,
            head_link: None,
            tail_link: None,
            relation_kg: None,
        })
    }

    pub fn head_entity(&self) -> Option<&str> {
        self.head_link.as_ref().map(|l| l.entity_id.as_str())
    }

    pub fn tail_entity(&self) -> Option<&str> {
        self.tail_link.as_ref().map(|l| l.entity_id.as_str())
    }
}

/// Sets `relation_kg` on every fact from the curated relation map.
pub fn map_facts<S: Scalar>(facts: &mut [LinkedFact<S>], relmap: &RelationMap) {
    for f in facts {
        f.relation_kg = map_relation(f.relation_normalized.as_str(), relmap);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub sent_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenFact<S> {
    pub category: Category,
    pub head_surface: String,
    pub head_entity: Option<String>,
    pub relation_surface: String,
    pub relation_kg: Option<String>,
    pub relation_normalized: NormalizedPhrase,
    pub tail_surface: String,
    pub tail_entity: Option<String>,
    pub normalized_degree: S,
    pub provenance: Provenance,
    /// Number of merged duplicates this fact stands for.
    #[serde(default = "one")]
    pub support: u32,
}

fn one() -> u32 {
    1
}

/// Identity of one part of a fact: the schema id when mapped, else normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyPart {
    Schema(String),
    Open(String),
}

pub type FactKey = (KeyPart, KeyPart, KeyPart);

impl<S: Scalar> OpenFact<S> {
    pub fn from_linked(f: &LinkedFact<S>) -> Self {
        let head_entity = f.head_entity().map(str::to_string);
        let tail_entity = f.tail_entity().map(str::to_string);
        Self {
            category: classify(
                head_entity.is_some(),
                f.relation_kg.is_some(),
                tail_entity.is_some(),
            ),
            head_surface: f.fact.head_surface.clone(),
            head_entity,
            relation_surface: f.fact.relation_surface.clone(),
            relation_kg: f.relation_kg.clone(),
            relation_normalized: f.relation_normalized.clone(),
            tail_surface: f.fact.tail_surface.clone(),
            tail_entity,
            normalized_degree: f.fact.normalized_degree,
            provenance: Provenance {
                doc_id: f.fact.doc_id.clone(),
                sent_id: f.fact.sent_id,
            },
            support: 1,
        }
    }

    pub fn key(&self) -> FactKey {
        let part = |schema: &Option<String>, open: String| match schema {
            Some(id) => KeyPart::Schema(id.clone()),
            None => KeyPart::Open(open),
        };
        (
            part(&self.head_entity, normalize_mention(&self.head_surface)),
            part(&self.relation_kg, self.relation_normalized.to_string()),
            part(&self.tail_entity, normalize_mention(&self.tail_surface)),
        )
    }

    /// The category agrees with which of head, relation and tail are mapped.
    pub fn category_consistent(&self) -> bool {
        self.category
            == classify(
                self.head_entity.is_some(),
                self.relation_kg.is_some(),
                self.tail_entity.is_some(),
            )
    }

    fn head_label(&self) -> &str {
        self.head_entity.as_deref().unwrap_or(&self.head_surface)
    }

    fn relation_label(&self) -> &str {
        self.relation_kg
            .as_deref()
            .unwrap_or(&self.relation_surface)
    }

    fn tail_label(&self) -> &str {
        self.tail_entity.as_deref().unwrap_or(&self.tail_surface)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenKg<S> {
    facts: Vec<OpenFact<S>>,
    by_slot: BTreeMap<(Option<String>, Option<String>), Vec<usize>>,
    by_category: BTreeMap<Category, Vec<usize>>,
}

impl<S: Scalar> Default for OpenKg<S> {
    fn default() -> Self {
        Self::from_facts(Vec::new())
    }
}

impl<S: Scalar> OpenKg<S> {
    /// Deduplicates by [`OpenFact::key`], keeping the highest-degree witness
    /// (earliest provenance on ties) and summing support. Output is sorted by
    /// category, then key.
    pub fn from_facts(facts: Vec<OpenFact<S>>) -> Self {
        let mut merged: BTreeMap<(Category, FactKey), OpenFact<S>> = BTreeMap::new();
        for fact in facts {
            let key = (fact.category, fact.key());
            match merged.get_mut(&key) {
                None => {
                    merged.insert(key, fact);
                }
                Some(existing) => {
                    let support = existing.support + fact.support;
                    let better = cmp_desc(fact.normalized_degree, existing.normalized_degree)
                        .then_with(|| fact.provenance.cmp(&existing.provenance))
                        .is_lt();
                    if better {
                        *existing = fact;
                    }
                    existing.support = support;
                }
            }
        }
        let facts: Vec<OpenFact<S>> = merged.into_values().collect();
        let mut by_slot: BTreeMap<_, Vec<usize>> = BTreeMap::new();
        let mut by_category: BTreeMap<_, Vec<usize>> = BTreeMap::new();
        for (i, f) in facts.iter().enumerate() {
            by_slot
                .entry((f.head_entity.clone(), f.relation_kg.clone()))
                .or_default()
                .push(i);
            by_category.entry(f.category).or_default().push(i);
        }
        Self {
            facts,
            by_slot,
            by_category,
        }
    }

    pub fn facts(&self) -> &[OpenFact<S>] {
        &self.facts
    }

    pub fn into_facts(self) -> Vec<OpenFact<S>> {
        self.facts
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn category(&self, category: Category) -> impl Iterator<Item = &OpenFact<S>> {
        self.by_category
            .get(&category)
            .into_iter()
            .flatten()
            .map(|&i| &self.facts[i])
    }

    pub fn category_count(&self, category: Category) -> usize {
        self.by_category.get(&category).map_or(0, Vec::len)
    }

    /// Facts with the given head entity and KG relation.
    pub fn slot(&self, head_entity: &str, relation_kg: &str) -> impl Iterator<Item = &OpenFact<S>> {
        self.by_slot
            .get(&(Some(head_entity.to_string()), Some(relation_kg.to_string())))
            .into_iter()
            .flatten()
            .map(|&i| &self.facts[i])
    }

    pub fn slot_index_total(&self) -> usize {
        self.by_slot.values().map(Vec::len).sum()
    }
}

/// Builds the open KG from mapped, linked facts.
pub fn assemble<'a, S: Scalar, I>(facts: I) -> OpenKg<S>
where
    I: IntoIterator<Item = &'a LinkedFact<S>>,
{
    OpenKg::from_facts(facts.into_iter().map(OpenFact::from_linked).collect())
}

/// Maps relations with `relmap`, then assembles.
pub fn assemble_with_map<S: Scalar>(facts: &[LinkedFact<S>], relmap: &RelationMap) -> OpenKg<S> {
    let mut mapped = facts.to_vec();
    map_facts(&mut mapped, relmap);
    assemble(&mapped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Tsv,
    Dot,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Jsonl => "okg.jsonl",
            ExportFormat::Tsv => "okg.tsv",
            ExportFormat::Dot => "okg.dot",
        }
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ExportFormat::Jsonl),
            "tsv" => Ok(ExportFormat::Tsv),
            "dot" => Ok(ExportFormat::Dot),
            other => Err(format!("unknown export format {other:?} (jsonl, tsv, dot)")),
        }
    }
}

struct CountingWriter<W> {
    inner: W,
    written: usize,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

fn dot_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' | '\r' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Writes the KG in the given format and returns the number of bytes written.
pub fn export<S: Scalar, W: Write>(
    kg: &OpenKg<S>,
    format: ExportFormat,
    sink: W,
) -> std::io::Result<usize> {
    let mut w = CountingWriter {
        inner: sink,
        written: 0,
    };
    match format {
        ExportFormat::Jsonl => {
            for f in kg.facts() {
                serde_json::to_writer(&mut w, f)?;
                w.write_all(b"\n")?;
            }
        }
        ExportFormat::Tsv => {
            for f in kg.facts() {
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}",
                    tsv::clean(f.head_label()),
                    tsv::clean(f.relation_label()),
                    tsv::clean(f.tail_label()),
                    f.category,
                    f.normalized_degree
                )?;
            }
        }
        ExportFormat::Dot => {
            writeln!(w, "digraph openkg {{")?;
            for f in kg.facts() {
                let schema = if f.category == Category::Mapped {
                    "fixed"
                } else {
                    "open"
                };
                writeln!(
                    w,
                    "  {} -> {} [label={}, schema={}];",
                    dot_quote(f.head_label()),
                    dot_quote(f.tail_label()),
                    dot_quote(f.relation_label()),
                    schema
                )?;
            }
            writeln!(w, "}}")?;
        }
    }
    w.flush()?;
    Ok(w.written)
}

/// Reads a `.okg.jsonl` export back into a KG.
pub fn read_jsonl<S: Scalar, R: BufRead>(input: R) -> Result<OpenKg<S>, serde_json::Error> {
    let mut facts = Vec::new();
    for line in input.lines() {
        let line = line.map_err(serde_json::Error::io)?;
        if line.trim().is_empty() {
            continue;
        }
        facts.push(serde_json::from_str(&line)?);
    }
    Ok(OpenKg::from_facts(facts))
}
