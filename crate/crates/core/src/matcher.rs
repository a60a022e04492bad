//! Candidate fact matching: beam search over a sentence's attention matrix.
//!
//! For every ordered pair of noun chunks the search starts at the head,
//! repeatedly yields successors by stepping to a token further toward the tail
//! (accumulating the attention that the new token pays to the current one),
//! and stops a candidate once it lands on the tail. The `k` best candidates by
//! accumulated degree are kept after every round.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AttentionTensor, NounChunk, SentenceRecord, TokenAnnotation};
use crate::scalar::{cmp_desc, Scalar};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchError {
    /// No path reaches the tail within the depth bound. Not a failure: the pair
    /// simply yields no candidate fact.
    #[error("no candidate fact for this pair")]
    EmptyResult,
    #[error("attention must be reduced to a single head before matching")]
    NotReduced,
    #[error("head and tail must be distinct chunks")]
    SameChunk,
    #[error("attention dim {dim} does not match token count {tokens}")]
    DimMismatch { dim: usize, tokens: usize },
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub beam_size: usize,
    /// Upper bound on relation tokens, i.e. the search depth.
    pub max_relation_len: usize,
    /// Divide the accumulated degree by the number of steps taken.
    pub normalize_by_length: bool,
    pub max_pair_token_gap: Option<usize>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            beam_size: 6,
            max_relation_len: 8,
            normalize_by_length: true,
            max_pair_token_gap: None,
        }
    }
}

impl MatchConfig {
    pub fn with_beam_size(beam_size: usize) -> Self {
        Self {
            beam_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        if self.beam_size == 0 {
            return Err(MatchError::InvalidConfig(
                "beam_size must be at least 1".into(),
            ));
        }
        if self.max_relation_len == 0 {
            return Err(MatchError::InvalidConfig(
                "max_relation_len must be at least 1".into(),
            ));
        }
        if self.max_pair_token_gap == Some(0) {
            return Err(MatchError::InvalidConfig(
                "max_pair_token_gap must be positive when set".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Head precedes tail; the search walks left to right.
    Forward,
    /// Head follows tail; the search walks right to left.
    Backward,
}

/// An ordered pair of chunk indices into `SentenceRecord::chunks`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPair {
    pub head: usize,
    pub tail: usize,
    pub direction: Direction,
}

/// Token distance between the facing edges of two chunks.
fn pair_gap(head: &NounChunk, tail: &NounChunk) -> usize {
    if head.first_token < tail.first_token {
        tail.first_token - head.last_token
    } else {
        head.first_token - tail.last_token
    }
}

/// All ordered pairs of distinct chunks, sorted by `(head.first_token, tail.first_token)`.
pub fn enumerate_pairs<S>(record: &SentenceRecord<S>, cfg: &MatchConfig) -> Vec<ChunkPair> {
    let chunks = &record.chunks;
    let mut pairs = Vec::new();
    for (h, head) in chunks.iter().enumerate() {
        for (t, tail) in chunks.iter().enumerate() {
            if h == t {
                continue;
            }
            if matches!(cfg.max_pair_token_gap, Some(max) if pair_gap(head, tail) > max) {
                continue;
            }
            let direction = if head.first_token < tail.first_token {
                Direction::Forward
            } else {
                Direction::Backward
            };
            pairs.push(ChunkPair {
                head: h,
                tail: t,
                direction,
            });
        }
    }
    pairs.sort_by_key(|p| (chunks[p.head].first_token, chunks[p.tail].first_token));
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateState {
    Growing,
    Complete,
}

/// An intermediate or finished path in the beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCandidate<S> {
    /// Last accepted token (the tail edge once complete).
    pub query_pos: usize,
    /// Relation tokens in search order.
    pub relation_positions: Vec<usize>,
    pub degree: S,
    pub state: CandidateState,
}

impl<S: Scalar> BeamCandidate<S> {
    /// Ranking inside the beam: higher degree, then smaller newest position, then
    /// shorter relation. The final positional comparison only makes the order total.
    fn rank(&self, other: &Self) -> Ordering {
        cmp_desc(self.degree, other.degree)
            .then(self.query_pos.cmp(&other.query_pos))
            .then(
                self.relation_positions
                    .len()
                    .cmp(&other.relation_positions.len()),
            )
            .then_with(|| self.relation_positions.cmp(&other.relation_positions))
    }
}

/// Counters collected during a search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Successor scores looked up in the attention matrix.
    pub yield_evaluations: usize,
    pub rounds: usize,
}

/// Start token, tail edge, and a step function for a chunk pair.
fn endpoints(head: &NounChunk, tail: &NounChunk) -> (usize, usize, Direction) {
    if head.first_token < tail.first_token {
        (head.last_token, tail.first_token, Direction::Forward)
    } else {
        (head.first_token, tail.last_token, Direction::Backward)
    }
}

/// Runs the beam search for one chunk pair and returns the final beam.
///
/// The returned beam may contain complete candidates with an empty relation
/// (a direct head-to-tail step); callers that want facts should drop them.
pub fn search_paths<S: Scalar>(
    attention: &AttentionTensor<S>,
    head: &NounChunk,
    tail: &NounChunk,
    cfg: &MatchConfig,
    stats: &mut SearchStats,
) -> Vec<BeamCandidate<S>> {
    let (start, tail_edge, direction) = endpoints(head, tail);
    let successors = |from: usize| -> Box<dyn Iterator<Item = usize>> {
        match direction {
            Direction::Forward => Box::new(from + 1..=tail_edge),
            Direction::Backward => Box::new((tail_edge..from).rev()),
        }
    };

    let mut beam = vec![BeamCandidate {
        query_pos: start,
        relation_positions: Vec::new(),
        degree: S::zero(),
        state: CandidateState::Growing,
    }];

    while beam.iter().any(|c| c.state == CandidateState::Growing) {
        stats.rounds += 1;
        let mut next = Vec::with_capacity(beam.len() * 2);
        for cand in beam {
            if cand.state == CandidateState::Complete {
                next.push(cand);
                continue;
            }
            let at_depth_limit = cand.relation_positions.len() >= cfg.max_relation_len;
            for p in successors(cand.query_pos) {
                let lands_on_tail = p == tail_edge;
                if at_depth_limit && !lands_on_tail {
                    continue;
                }
                stats.yield_evaluations += 1;
                let degree = cand.degree + attention.get(p, cand.query_pos);
                let mut relation_positions = cand.relation_positions.clone();
                let state = if lands_on_tail {
                    CandidateState::Complete
                } else {
                    relation_positions.push(p);
                    CandidateState::Growing
                };
                next.push(BeamCandidate {
                    query_pos: p,
                    relation_positions,
                    degree,
                    state,
                });
            }
        }
        next.sort_by(BeamCandidate::rank);
        next.dedup_by(|a, b| {
            a.query_pos == b.query_pos && a.relation_positions == b.relation_positions
        });
        next.truncate(cfg.beam_size);
        beam = next;
    }
    beam
}

/// A matched `(head, relation, tail)` triple with its matching degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFact<S> {
    pub doc_id: String,
    pub sent_id: u64,
    /// Index of the head chunk in the record.
    pub head_chunk: usize,
    pub tail_chunk: usize,
    pub head: NounChunk,
    pub tail: NounChunk,
    pub head_surface: String,
    pub relation_surface: String,
    pub tail_surface: String,
    /// Relation tokens in search order.
    pub relation_positions: Vec<usize>,
    /// Relation tokens in sentence order.
    pub relation_tokens: Vec<TokenAnnotation>,
    pub raw_degree: S,
    pub normalized_degree: S,
    pub direction: Direction,
}

impl<S: Scalar> CandidateFact<S> {
    /// Positions sorted ascending.
    pub fn sorted_positions(&self) -> Vec<usize> {
        let mut p = self.relation_positions.clone();
        p.sort_unstable();
        p
    }

    /// Canonical ordering key used when merging partition outputs.
    pub fn sort_key(&self) -> (&str, u64, usize, usize, &[usize]) {
        (
            &self.doc_id,
            self.sent_id,
            self.head.first_token,
            self.tail.first_token,
            &self.relation_positions,
        )
    }
}

fn normalize_degree<S: Scalar>(raw: S, relation_len: usize, cfg: &MatchConfig) -> S {
    if cfg.normalize_by_length {
        // the final step onto the tail counts toward the length
        raw / S::from_usize(relation_len + 1).expect("small integer")
    } else {
        raw
    }
}

fn check_inputs<S: Scalar>(
    record: &SentenceRecord<S>,
    attention: &AttentionTensor<S>,
    cfg: &MatchConfig,
) -> Result<(), MatchError> {
    cfg.validate()?;
    if !attention.is_reduced() {
        return Err(MatchError::NotReduced);
    }
    if attention.dim() != record.tokens.len() {
        return Err(MatchError::DimMismatch {
            dim: attention.dim(),
            tokens: record.tokens.len(),
        });
    }
    Ok(())
}

/// Beam search for one chunk pair, returning up to `k` facts by normalized degree.
pub fn beam_search<S: Scalar>(
    record: &SentenceRecord<S>,
    pair: ChunkPair,
    attention: &AttentionTensor<S>,
    cfg: &MatchConfig,
) -> Result<Vec<CandidateFact<S>>, MatchError> {
    beam_search_with_stats(record, pair, attention, cfg, &mut SearchStats::default())
}

pub fn beam_search_with_stats<S: Scalar>(
    record: &SentenceRecord<S>,
    pair: ChunkPair,
    attention: &AttentionTensor<S>,
    cfg: &MatchConfig,
    stats: &mut SearchStats,
) -> Result<Vec<CandidateFact<S>>, MatchError> {
    check_inputs(record, attention, cfg)?;
    if pair.head == pair.tail {
        return Err(MatchError::SameChunk);
    }
    let head = &record.chunks[pair.head];
    let tail = &record.chunks[pair.tail];
    let beam = search_paths(attention, head, tail, cfg, stats);

    let mut ranked: Vec<(S, BeamCandidate<S>)> = beam
        .into_iter()
        .filter(|c| c.state == CandidateState::Complete && !c.relation_positions.is_empty())
        .map(|c| {
            (
                normalize_degree(c.degree, c.relation_positions.len(), cfg),
                c,
            )
        })
        .collect();
    if ranked.is_empty() {
        return Err(MatchError::EmptyResult);
    }
    ranked.sort_by(|(na, a), (nb, b)| cmp_desc(*na, *nb).then_with(|| a.rank(b)));

    let (_, _, direction) = endpoints(head, tail);
    Ok(ranked
        .into_iter()
        .map(|(normalized_degree, c)| {
            let mut sorted = c.relation_positions.clone();
            sorted.sort_unstable();
            let relation_tokens: Vec<TokenAnnotation> =
                sorted.iter().map(|&p| record.tokens[p].clone()).collect();
            let relation_surface = relation_tokens
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ");
            CandidateFact {
                doc_id: record.doc_id.clone(),
                sent_id: record.sent_id,
                head_chunk: pair.head,
                tail_chunk: pair.tail,
                head: head.clone(),
                tail: tail.clone(),
                head_surface: head.surface.clone(),
                relation_surface,
                tail_surface: tail.surface.clone(),
                relation_positions: c.relation_positions,
                relation_tokens,
                raw_degree: c.degree,
                normalized_degree,
                direction,
            }
        })
        .collect())
}

/// All candidate facts of a sentence, in pair order then rank.
pub fn match_sentence<S: Scalar>(
    record: &SentenceRecord<S>,
    cfg: &MatchConfig,
) -> Result<Vec<CandidateFact<S>>, MatchError> {
    check_inputs(record, &record.attention, cfg)?;
    let mut out = Vec::new();
    for pair in enumerate_pairs(record, cfg) {
        match beam_search(record, pair, &record.attention, cfg) {
            Ok(facts) => out.extend(facts),
            Err(MatchError::EmptyResult) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Reduction, Upos};

    fn sentence(words: &[(&str, &str, Upos)], chunks: &[(usize, usize)]) -> SentenceRecord<f64> {
        let mut text = String::new();
        let mut tokens = Vec::new();
        for (w, lemma, pos) in words {
            if !text.is_empty() {
                text.push(' ');
            }
            tokens.push(TokenAnnotation::new(w, lemma, *pos, text.len()));
            text.push_str(w);
        }
        let chunks = chunks
            .iter()
            .map(|&(a, b)| {
                let surface = tokens[a..=b]
                    .iter()
                    .map(|t| t.text.as_str())
                    .collect::<Vec<_>>();
                NounChunk::new(a, b, &surface.join(" "))
            })
            .collect();
        let n = tokens.len();
        SentenceRecord {
            doc_id: "doc".into(),
            sent_id: 0,
            text,
            tokens,
            chunks,
            attention: AttentionTensor::reduced(n, vec![0.0; n * n], "last", Reduction::Mean)
                .unwrap(),
        }
    }

    fn with_gap_chunks(n: usize, chunks: &[(usize, usize)]) -> SentenceRecord<f64> {
        let words: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let ws: Vec<(&str, &str, Upos)> = words
            .iter()
            .map(|w| (w.as_str(), w.as_str(), Upos::Noun))
            .collect();
        sentence(&ws, chunks)
    }

    #[test]
    fn three_chunks_give_six_pairs() {
        let r = with_gap_chunks(6, &[(0, 0), (2, 2), (4, 5)]);
        let pairs = enumerate_pairs(&r, &MatchConfig::default());
        assert_eq!(pairs.len(), 6);
        let keys: Vec<_> = pairs
            .iter()
            .map(|p| (r.chunks[p.head].first_token, r.chunks[p.tail].first_token))
            .collect();
        assert_eq!(keys, vec![(0, 2), (0, 4), (2, 0), (2, 4), (4, 0), (4, 2)]);
        assert_eq!(pairs[0].direction, Direction::Forward);
        assert_eq!(pairs[2].direction, Direction::Backward);
    }

    #[test]
    fn single_chunk_has_no_pairs() {
        let r = with_gap_chunks(3, &[(1, 1)]);
        assert!(enumerate_pairs(&r, &MatchConfig::default()).is_empty());
    }

    #[test]
    fn gap_filter_drops_distant_pairs() {
        let r = with_gap_chunks(14, &[(0, 0), (12, 13)]);
        let cfg = MatchConfig {
            max_pair_token_gap: Some(10),
            ..MatchConfig::default()
        };
        assert!(enumerate_pairs(&r, &cfg).is_empty());
        let cfg = MatchConfig {
            max_pair_token_gap: Some(12),
            ..MatchConfig::default()
        };
        assert_eq!(enumerate_pairs(&r, &cfg).len(), 2);
    }

    #[test]
    fn adjacent_chunks_yield_nothing() {
        let mut r = with_gap_chunks(3, &[(0, 0), (1, 2)]);
        r.attention = AttentionTensor::reduced(3, vec![0.5; 9], "last", Reduction::Mean).unwrap();
        let pair = enumerate_pairs(&r, &MatchConfig::default())[0];
        assert_eq!(
            beam_search(&r, pair, &r.attention, &MatchConfig::default()),
            Err(MatchError::EmptyResult)
        );
        assert!(match_sentence(&r, &MatchConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn no_chunks_no_facts() {
        let r = with_gap_chunks(4, &[]);
        assert!(match_sentence(&r, &MatchConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn per_head_attention_is_rejected() {
        let mut r = with_gap_chunks(3, &[(0, 0), (2, 2)]);
        r.attention = AttentionTensor::per_head(2, 3, vec![0.1; 18], "last").unwrap();
        assert_eq!(
            match_sentence(&r, &MatchConfig::default()),
            Err(MatchError::NotReduced)
        );
    }

    #[test]
    fn zero_beam_is_invalid() {
        let r = with_gap_chunks(3, &[(0, 0), (2, 2)]);
        assert!(matches!(
            match_sentence(&r, &MatchConfig::with_beam_size(0)),
            Err(MatchError::InvalidConfig(_))
        ));
    }

    #[test]
    fn backward_search_walks_right_to_left() {
        // head at 3, tail at 0: path 3 -> 2 -> 0 scores A[2][3] + A[0][2]
        let mut r = with_gap_chunks(4, &[(0, 0), (3, 3)]);
        let mut a = vec![0.0; 16];
        a[2 * 4 + 3] = 0.5;
        a[2] = 0.25;
        a[4 + 3] = 0.1;
        r.attention = AttentionTensor::reduced(4, a, "last", Reduction::Mean).unwrap();
        let pairs = enumerate_pairs(&r, &MatchConfig::default());
        let back = pairs
            .iter()
            .find(|p| p.direction == Direction::Backward)
            .unwrap();
        let facts = beam_search(&r, *back, &r.attention, &MatchConfig::with_beam_size(1)).unwrap();
        assert_eq!(facts[0].relation_positions, vec![2]);
        assert_eq!(facts[0].raw_degree, 0.75);
        assert_eq!(facts[0].direction, Direction::Backward);
    }

    #[test]
    fn depth_bound_limits_relation_length() {
        // a strong chain through every token; with max_relation_len 2 the
        // three-token relation is unreachable
        let n = 5;
        let mut r = with_gap_chunks(n, &[(0, 0), (4, 4)]);
        let mut a = vec![0.01; n * n];
        for i in 1..n {
            a[i * n + i - 1] = 0.9;
        }
        r.attention = AttentionTensor::reduced(n, a, "last", Reduction::Mean).unwrap();
        let pair = enumerate_pairs(&r, &MatchConfig::default())[0];
        let full = beam_search(&r, pair, &r.attention, &MatchConfig::default()).unwrap();
        assert_eq!(full[0].relation_positions, vec![1, 2, 3]);
        let cfg = MatchConfig {
            max_relation_len: 2,
            ..MatchConfig::default()
        };
        let bounded = beam_search(&r, pair, &r.attention, &cfg).unwrap();
        assert!(bounded.iter().all(|f| f.relation_positions.len() <= 2));
    }
    fn widen(values: Vec<f64>) -> (Vec<CandidateFact<f64>>, Vec<CandidateFact<f64>>) {
        let mut r = with_gap_chunks(5, &[(0, 0), (4, 4)]);
        r.attention = AttentionTensor::reduced(5, values, "last", Reduction::Mean).unwrap();
        let pair = enumerate_pairs(&r, &MatchConfig::default())[0];
        (
            beam_search(&r, pair, &r.attention, &MatchConfig::with_beam_size(1)).unwrap(),
            beam_search(&r, pair, &r.attention, &MatchConfig::with_beam_size(2)).unwrap(),
        )
    }

    #[test]
    fn wider_beam_can_drop_a_fact() {
        let (narrow, wide) = widen(vec![
            0.3, 0.1, 0.9, 0.1, 0.3, 0.9, 0.1, 0.9, 0.0, 0.9, 0.3, 0.4, 0.2, 0.9, 0.2, 0.7, 0.8,
            0.8, 0.7, 0.4, 0.2, 0.1, 0.8, 0.0, 0.8,
        ]);
        assert_eq!(narrow[0].relation_positions, vec![1, 3]);
        assert!(wide.iter().all(|f| f.relation_positions != vec![1, 3]));
        assert!(wide
            .windows(2)
            .all(|w| w[0].normalized_degree >= w[1].normalized_degree));
    }

    #[test]
    fn wider_beam_can_lower_the_best_normalized_degree() {
        let (narrow, wide) = widen(vec![
            0.7, 0.1, 0.1, 0.9, 0.2, 0.3, 0.0, 0.9, 0.9, 0.8, 0.2, 0.8, 0.0, 0.6, 0.3, 0.0, 0.4,
            0.7, 0.8, 0.4, 0.3, 0.9, 0.6, 0.4, 0.3,
        ]);
        assert_eq!(narrow[0].relation_positions, vec![1]);
        assert!(wide[0].normalized_degree < narrow[0].normalized_degree);
        assert!(wide[0].raw_degree > narrow[0].raw_degree);
    }
}
