//! Post-match constraints on candidate facts.
//!
//! A candidate survives when its normalized degree clears a threshold
//! (constraint 1), its normalized relation phrase takes enough distinct
//! head/tail pairs across the corpus (constraint 2), and its relation tokens are
//! contiguous in the sentence (constraint 3). Constraint 2 needs a corpus-wide
//! pass, so statistics are collected first and merged across partitions.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::matcher::CandidateFact;
use crate::relmap::normalize_phrase;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig<S> {
    pub degree_threshold: S,
    pub min_distinct_pairs: usize,
    pub require_contiguous: bool,
}

impl<S: Scalar> Default for FilterConfig<S> {
    fn default() -> Self {
        Self {
            degree_threshold: S::lit(0.005),
            min_distinct_pairs: 10,
            require_contiguous: true,
        }
    }
}

impl<S: Scalar> FilterConfig<S> {
    pub fn validate(&self) -> Result<(), String> {
        if self.degree_threshold.is_nan() || self.degree_threshold < S::zero() {
            return Err("degree_threshold must be non-negative".into());
        }
        if self.min_distinct_pairs == 0 {
            return Err("min_distinct_pairs must be positive".into());
        }
        Ok(())
    }
}

/// True iff the relation positions, sorted, are consecutive integers.
pub fn check_contiguous<S: Scalar>(fact: &CandidateFact<S>) -> bool {
    positions_contiguous(&fact.relation_positions)
}

pub fn positions_contiguous(positions: &[usize]) -> bool {
    let mut sorted = positions.to_vec();
    sorted.sort_unstable();
    sorted.windows(2).all(|w| w[1] == w[0] + 1)
}

/// Anything that can answer "how many distinct head/tail pairs does this phrase take".
pub trait DistinctPairCounts {
    fn distinct_pairs(&self, phrase: &str) -> usize;
}

/// Exact distinct head/tail pair sets per normalized relation phrase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationStats {
    pairs: BTreeMap<String, BTreeSet<(String, String)>>,
}

impl RelationStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, phrase: &str, head: &str, tail: &str) {
        self.pairs
            .entry(phrase.to_string())
            .or_default()
            .insert((head.to_string(), tail.to_string()));
    }

    /// Set union per phrase. Commutative, associative and idempotent.
    pub fn merge(&mut self, other: &RelationStats) {
        for (phrase, set) in &other.pairs {
            self.pairs
                .entry(phrase.clone())
                .or_default()
                .extend(set.iter().cloned());
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(phrase, distinct count)` in phrase order.
    pub fn counts(&self) -> impl Iterator<Item = (&str, usize)> {
        self.pairs.iter().map(|(p, s)| (p.as_str(), s.len()))
    }

    pub fn to_counts(&self) -> PhraseCounts {
        PhraseCounts(self.counts().map(|(p, c)| (p.to_string(), c)).collect())
    }

    /// Writes `phrase \t distinct_pair_count` lines.
    pub fn write_tsv<W: Write>(&self, sink: W) -> std::io::Result<()> {
        self.to_counts().write_tsv(sink)
    }
}

impl DistinctPairCounts for RelationStats {
    fn distinct_pairs(&self, phrase: &str) -> usize {
        self.pairs.get(phrase).map_or(0, BTreeSet::len)
    }
}

/// Distinct-pair counts as persisted in the stats TSV.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PhraseCounts(pub BTreeMap<String, usize>);

impl PhraseCounts {
    pub fn write_tsv<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for (phrase, count) in &self.0 {
            writeln!(sink, "{}\t{count}", crate::tsv::clean(phrase))?;
        }
        sink.flush()
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, crate::tsv::TsvError> {
        let mut out = BTreeMap::new();
        for row in crate::tsv::rows(input, 2) {
            let row = row?;
            let count = row.parse::<usize>(1)?;
            out.insert(row.fields[0].clone(), count);
        }
        Ok(PhraseCounts(out))
    }
}

impl DistinctPairCounts for PhraseCounts {
    fn distinct_pairs(&self, phrase: &str) -> usize {
        self.0.get(phrase).copied().unwrap_or(0)
    }
}

/// Normalized relation phrase of a fact, as used for constraint 2.
pub fn fact_phrase<S: Scalar>(fact: &CandidateFact<S>) -> Option<String> {
    normalize_phrase(&fact.relation_tokens).map(|p| p.into_string())
}

/// Builds exact per-phrase pair sets over a fact stream.
pub fn collect_stats<'a, S, I, N>(facts: I, normalizer: N) -> RelationStats
where
    S: Scalar,
    I: IntoIterator<Item = &'a CandidateFact<S>>,
    N: Fn(&CandidateFact<S>) -> Option<String>,
{
    let mut stats = RelationStats::new();
    for fact in facts {
        if let Some(phrase) = normalizer(fact) {
            stats.insert(&phrase, &fact.head_surface, &fact.tail_surface);
        }
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    #[serde(rename = "constraint1")]
    LowDegree,
    #[serde(rename = "constraint2")]
    RareRelation,
    #[serde(rename = "constraint3")]
    NonContiguous,
}

impl RejectReason {
    pub fn tag(self) -> &'static str {
        match self {
            RejectReason::LowDegree => "constraint1",
            RejectReason::RareRelation => "constraint2",
            RejectReason::NonContiguous => "constraint3",
        }
    }
}

/// A rejected fact and the first constraint it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected<S> {
    pub reason: RejectReason,
    #[serde(flatten)]
    pub fact: CandidateFact<S>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome<S> {
    pub kept: Vec<CandidateFact<S>>,
    pub rejected: Vec<Rejected<S>>,
}

/// First failing constraint in order 1, 2, 3, or `None` if the fact passes.
pub fn first_failure<S: Scalar, C: DistinctPairCounts + ?Sized>(
    fact: &CandidateFact<S>,
    stats: &C,
    cfg: &FilterConfig<S>,
) -> Option<RejectReason> {
    if fact.normalized_degree.is_nan() || fact.normalized_degree < cfg.degree_threshold {
        return Some(RejectReason::LowDegree);
    }
    let distinct = fact_phrase(fact).map_or(0, |p| stats.distinct_pairs(&p));
    if distinct < cfg.min_distinct_pairs {
        return Some(RejectReason::RareRelation);
    }
    if cfg.require_contiguous && !check_contiguous(fact) {
        return Some(RejectReason::NonContiguous);
    }
    None
}

/// Splits facts into kept and rejected, preserving input order in both.
pub fn apply_filters<S, C, I>(facts: I, stats: &C, cfg: &FilterConfig<S>) -> FilterOutcome<S>
where
    S: Scalar,
    C: DistinctPairCounts + ?Sized,
    I: IntoIterator<Item = CandidateFact<S>>,
{
    let mut out = FilterOutcome {
        kept: Vec::new(),
        rejected: Vec::new(),
    };
    for fact in facts {
        match first_failure(&fact, stats, cfg) {
            None => out.kept.push(fact),
            Some(reason) => out.rejected.push(Rejected { reason, fact }),
        }
    }
    out
}
