//! Slot-filling evaluation of mapped facts and review sampling of the rest.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{Category, OpenFact};
use crate::scalar::Scalar;
use crate::tsv::{self, TsvError};

/// Reference KG: a set of `(head_entity, relation, tail_entity)` triples with
/// slot and entity-pair indexes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleKg {
    facts: BTreeSet<(String, String, String)>,
    slots: BTreeMap<(String, String), BTreeSet<String>>,
    pairs: BTreeMap<(String, String), BTreeSet<String>>,
}

impl OracleKg {
    pub fn from_triples<I: IntoIterator<Item = (String, String, String)>>(triples: I) -> Self {
        let mut kg = Self::default();
        for (h, r, t) in triples {
            kg.slots
                .entry((h.clone(), r.clone()))
                .or_default()
                .insert(t.clone());
            kg.pairs
                .entry((h.clone(), t.clone()))
                .or_default()
                .insert(r.clone());
            kg.facts.insert((h, r, t));
        }
        kg
    }

    /// Reads `head_entity \t relation \t tail_entity` lines.
    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, TsvError> {
        let mut triples = Vec::new();
        for row in tsv::rows(input, 3) {
            let row = row?;
            triples.push((
                row.fields[0].trim().to_string(),
                row.fields[1].trim().to_string(),
                row.fields[2].trim().to_string(),
            ));
        }
        Ok(Self::from_triples(triples))
    }

    pub fn write_tsv<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for (h, r, t) in &self.facts {
            writeln!(sink, "{h}\t{r}\t{t}")?;
        }
        sink.flush()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn contains(&self, h: &str, r: &str, t: &str) -> bool {
        self.facts
            .contains(&(h.to_string(), r.to_string(), t.to_string()))
    }

    /// Relations holding between two entities, in sorted order.
    pub fn relations_between(&self, head: &str, tail: &str) -> impl Iterator<Item = &str> {
        self.pairs
            .get(&(head.to_string(), tail.to_string()))
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    pub fn slot(&self, head: &str, relation: &str) -> Option<&BTreeSet<String>> {
        self.slots.get(&(head.to_string(), relation.to_string()))
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> impl Iterator<Item = (&(String, String), &BTreeSet<String>)> {
        self.slots.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport<S> {
    pub precision: S,
    pub recall: S,
    pub f1: S,
    /// Predictions counted in the precision denominator.
    pub num_predictions: usize,
    pub num_correct: usize,
    pub num_oracle_slots_filled: usize,
    pub num_oracle_slots: usize,
}

fn ratio<S: Scalar>(num: usize, den: usize) -> S {
    if den == 0 {
        S::zero()
    } else {
        S::from_usize(num).expect("count") / S::from_usize(den).expect("count")
    }
}

pub fn f1_score<S: Scalar>(p: S, r: S) -> S {
    if p + r == S::zero() {
        S::zero()
    } else if p == r {
        p
    } else {
        S::lit(2.0) * p * r / (p + r)
    }
}

/// Slot-filling precision, recall and F1 of the mapped facts.
///
/// A prediction is correct when its `(head, relation)` is an oracle slot and its
/// tail is among that slot's gold fills. Identical predictions count once.
/// Unless `strict_precision` is set, predictions on slots the oracle does not
/// define are left out of the precision denominator.
pub fn score_slot_filling<'a, S, I>(
    predictions: I,
    oracle: &OracleKg,
    strict_precision: bool,
) -> ScoreReport<S>
where
    S: Scalar,
    I: IntoIterator<Item = &'a OpenFact<S>>,
{
    let unique: BTreeSet<(&str, &str, &str)> = predictions
        .into_iter()
        .filter(|f| f.category == Category::Mapped)
        .filter_map(|f| {
            Some((
                f.head_entity.as_deref()?,
                f.relation_kg.as_deref()?,
                f.tail_entity.as_deref()?,
            ))
        })
        .collect();

    let mut on_slot = 0usize;
    let mut correct = 0usize;
    let mut filled: HashSet<(&str, &str)> = HashSet::new();
    for &(h, r, t) in &unique {
        if let Some(gold) = oracle.slot(h, r) {
            on_slot += 1;
            if gold.contains(t) {
                correct += 1;
                filled.insert((h, r));
            }
        }
    }
    let denominator = if strict_precision {
        unique.len()
    } else {
        on_slot
    };
    let precision = ratio::<S>(correct, denominator);
    let recall = ratio::<S>(filled.len(), oracle.num_slots());
    ScoreReport {
        precision,
        recall,
        f1: f1_score(precision, recall),
        num_predictions: denominator,
        num_correct: correct,
        num_oracle_slots_filled: filled.len(),
        num_oracle_slots: oracle.num_slots(),
    }
}

/// Seeded uniform sample without replacement, ordered by document for review.
pub fn sample_for_review<S: Scalar>(
    facts: &[OpenFact<S>],
    n: usize,
    seed: u64,
) -> Vec<&OpenFact<S>> {
    let amount = n.min(facts.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, facts.len(), amount).into_vec();
    picked.sort_by(|&a, &b| {
        facts[a]
            .provenance
            .cmp(&facts[b].provenance)
            .then(a.cmp(&b))
    });
    picked.into_iter().map(|i| &facts[i]).collect()
}

pub const REVIEW_HEADER: &str = "doc_id\tsent_id\thead\trelation\ttail\tcategory\tverdict";

/// Writes the review sheet with an empty verdict column.
pub fn write_review_sheet<S: Scalar, W: Write>(
    facts: &[&OpenFact<S>],
    mut sink: W,
) -> std::io::Result<()> {
    writeln!(sink, "{REVIEW_HEADER}")?;
    for f in facts {
        writeln!(
            sink,
            "{}\t{}\t{}\t{}\t{}\t{}\t",
            tsv::clean(&f.provenance.doc_id),
            f.provenance.sent_id,
            tsv::clean(&f.head_surface),
            tsv::clean(&f.relation_surface),
            tsv::clean(&f.tail_surface),
            f.category
        )?;
    }
    sink.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{classify, Provenance};
    use crate::relmap::NormalizedPhrase;

    fn pred(h: &str, r: &str, t: &str) -> OpenFact<f64> {
        OpenFact {
            category: classify(true, true, true),
            head_surface: h.into(),
            head_entity: Some(h.into()),
            relation_surface: r.into(),
            relation_kg: Some(r.into()),
            relation_normalized: NormalizedPhrase::parse("x").unwrap(),
            tail_surface: t.into(),
            tail_entity: Some(t.into()),
            normalized_degree: 0.1,
            provenance: Provenance {
                doc_id: format!("doc-{h}"),
                sent_id: 0,
            },
            support: 1,
        }
    }

    fn oracle() -> OracleKg {
        OracleKg::from_triples(
            [
                ("A", "r", "a"),
                ("B", "r", "b"),
                ("C", "r", "c"),
                ("D", "r", "d"),
            ]
            .iter()
            .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string())),
        )
    }

    #[test]
    fn partial_predictions() {
        let preds = [
            pred("A", "r", "a"),
            pred("B", "r", "b"),
            pred("C", "r", "wrong"),
        ];
        let rep = score_slot_filling(&preds, &oracle(), false);
        approx::assert_abs_diff_eq!(rep.precision, 0.6667, epsilon = 1e-4);
        approx::assert_abs_diff_eq!(rep.recall, 0.5, epsilon = 1e-4);
        approx::assert_abs_diff_eq!(rep.f1, 0.5714, epsilon = 1e-4);
        assert_eq!(
            (
                rep.num_predictions,
                rep.num_correct,
                rep.num_oracle_slots_filled,
                rep.num_oracle_slots
            ),
            (3, 2, 2, 4)
        );
    }

    #[test]
    fn perfect_predictions() {
        let preds: Vec<_> = ["A", "B", "C", "D"]
            .iter()
            .map(|h| pred(h, "r", &h.to_lowercase()))
            .collect();
        let rep = score_slot_filling(&preds, &oracle(), false);
        assert_eq!((rep.precision, rep.recall, rep.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predictions() {
        let rep = score_slot_filling::<f64, _>(&[], &oracle(), false);
        assert_eq!((rep.precision, rep.recall, rep.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn off_slot_predictions() {
        let preds = [pred("A", "r", "a"), pred("Z", "other", "z")];
        let lenient = score_slot_filling(&preds, &oracle(), false);
        assert_eq!(lenient.precision, 1.0);
        let strict = score_slot_filling(&preds, &oracle(), true);
        assert_eq!(strict.precision, 0.5);
    }

    #[test]
    fn unmapped_facts_are_ignored() {
        let mut p = pred("A", "r", "a");
        p.relation_kg = None;
        p.category = classify(true, false, true);
        let rep = score_slot_filling(&[p], &oracle(), true);
        assert_eq!(rep.num_predictions, 0);
    }

    #[test]
    fn oracle_indexes() {
        let kg =
            OracleKg::read_tsv("Q1\tborn_in\tQ2\nQ1\tlives_in\tQ2\nQ1\tborn_in\tQ2\n".as_bytes())
                .unwrap();
        assert_eq!(kg.len(), 2);
        assert_eq!(
            kg.relations_between("Q1", "Q2").collect::<Vec<_>>(),
            vec!["born_in", "lives_in"]
        );
        assert_eq!(kg.num_slots(), 2);
        assert!(kg.slot("Q1", "born_in").unwrap().contains("Q2"));
    }

    #[test]
    fn review_sampling() {
        let facts: Vec<_> = (0..20).map(|i| pred(&format!("H{i}"), "r", "t")).collect();
        assert!(sample_for_review(&facts, 0, 7).is_empty());
        let a = sample_for_review(&facts, 5, 7);
        let b = sample_for_review(&facts, 5, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let all = sample_for_review(&facts, 100, 7);
        assert_eq!(all.len(), 20);
        let distinct: BTreeSet<_> = all.iter().map(|f| f.head_surface.clone()).collect();
        assert_eq!(distinct.len(), 20);
        assert!(all.windows(2).all(|w| w[0].provenance <= w[1].provenance));
    }

    #[test]
    fn review_sheet_layout() {
        let facts = [pred("A", "r", "a")];
        let picked: Vec<_> = facts.iter().collect();
        let mut buf = Vec::new();
        write_review_sheet(&picked, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], REVIEW_HEADER);
        assert_eq!(lines[1], "doc-A\t0\tA\tr\ta\tmapped\t");
    }
}
