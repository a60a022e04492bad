#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use openkg::corpus::{
    AttentionTensor, NounChunk, Reduction, SentenceRecord, TokenAnnotation, Upos,
};
use openkg::kg::{classify, OpenFact, Provenance};
use openkg::matcher::{CandidateFact, Direction};
use openkg::pipeline::PipelineConfig;
use openkg::relmap::NormalizedPhrase;
use openkg::synth::PlantedFiles;

pub fn record_from(
    words: &[(&str, &str, Upos)],
    chunks: &[(usize, usize)],
    attention: Vec<f32>,
) -> SentenceRecord<f32> {
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
            let surface: Vec<&str> = tokens[a..=b].iter().map(|t| t.text.as_str()).collect();
            NounChunk::new(a, b, &surface.join(" "))
        })
        .collect();
    SentenceRecord {
        doc_id: "doc".into(),
        sent_id: 0,
        text,
        tokens,
        chunks,
        attention: AttentionTensor::reduced(words.len(), attention, "last", Reduction::Mean)
            .unwrap(),
    }
}

/// "Dylan is a songwriter ." with chunks Dylan and songwriter. Row is the
/// attending token.
pub fn dylan_record() -> SentenceRecord<f32> {
    let n = 5;
    let mut a = vec![0.0f32; n * n];
    let mut set = |i: usize, j: usize, v: f32| a[i * n + j] = v;
    set(1, 0, 0.3); // is -> Dylan
    set(2, 0, 0.1); // a -> Dylan
    set(3, 0, 0.05); // songwriter -> Dylan
    set(3, 1, 0.4); // songwriter -> is
    set(3, 2, 0.2); // songwriter -> a
    set(0, 3, 0.02); // reverse direction
    set(0, 2, 0.05);
    set(0, 1, 0.03);
    set(1, 3, 0.1);
    set(2, 3, 0.25);
    set(1, 2, 0.15);
    record_from(
        &[
            ("Dylan", "Dylan", Upos::Propn),
            ("is", "be", Upos::Aux),
            ("a", "a", Upos::Det),
            ("songwriter", "songwriter", Upos::Noun),
            (".", ".", Upos::Punct),
        ],
        &[(0, 0), (3, 3)],
        a,
    )
}

/// Random sentence of `n` tokens with two random non-overlapping chunks and
/// U[0,1) attention.
pub fn random_record<R: Rng>(rng: &mut R, n: usize) -> SentenceRecord<f32> {
    assert!(n >= 2);
    let a_first = rng.random_range(0..n - 1);
    let a_last = rng.random_range(a_first..n - 1);
    let b_first = rng.random_range(a_last + 1..n);
    let b_last = rng.random_range(b_first..n);
    let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
    let spec: Vec<(&str, &str, Upos)> = words
        .iter()
        .map(|w| (w.as_str(), w.as_str(), Upos::Noun))
        .collect();
    let values = (0..n * n).map(|_| rng.random::<f32>()).collect();
    record_from(&spec, &[(a_first, a_last), (b_first, b_last)], values)
}

/// Every admissible relation path for a chunk pair, by exhaustive DFS, with
/// its raw degree accumulated in path order.
pub fn enumerate_paths(
    att: &AttentionTensor<f32>,
    head: &NounChunk,
    tail: &NounChunk,
    max_len: usize,
) -> Vec<(Vec<usize>, f32)> {
    let (start, edge, forward) = if head.first_token < tail.first_token {
        (head.last_token, tail.first_token, true)
    } else {
        (head.first_token, tail.last_token, false)
    };
    let between: Vec<usize> = if forward {
        (start + 1..edge).collect()
    } else {
        (edge + 1..start).rev().collect()
    };
    let mut walk = Walk {
        att,
        between: &between,
        edge,
        max_len,
        out: Vec::new(),
    };
    walk.dfs(0, start, &mut Vec::new(), 0.0);
    walk.out
}

struct Walk<'a> {
    att: &'a AttentionTensor<f32>,
    between: &'a [usize],
    edge: usize,
    max_len: usize,
    out: Vec<(Vec<usize>, f32)>,
}

impl Walk<'_> {
    fn dfs(&mut self, from: usize, cur: usize, path: &mut Vec<usize>, degree: f32) {
        if !path.is_empty() {
            self.out
                .push((path.clone(), degree + self.att.get(self.edge, cur)));
        }
        if path.len() == self.max_len {
            return;
        }
        for i in from..self.between.len() {
            let p = self.between[i];
            path.push(p);
            self.dfs(i + 1, p, path, degree + self.att.get(p, cur));
            path.pop();
        }
    }
}

/// Number of distinct head-to-tail paths including the direct step, which is
/// the largest beam the search can ever need.
pub fn total_path_count(head: &NounChunk, tail: &NounChunk) -> usize {
    let between = if head.first_token < tail.first_token {
        tail.first_token - head.last_token - 1
    } else {
        head.first_token - tail.last_token - 1
    };
    1usize << between
}

/// Candidate fact with a single relation verb and optional adverb padding.
pub fn fact(
    head: &str,
    tail: &str,
    verb: &str,
    positions: Vec<usize>,
    normalized_degree: f32,
) -> CandidateFact<f32> {
    let tokens = positions
        .iter()
        .enumerate()
        .map(|(i, _)| {
            if i == 0 {
                TokenAnnotation::new(verb, verb, Upos::Verb, 0)
            } else {
                TokenAnnotation::new("really", "really", Upos::Adv, 0)
            }
        })
        .collect();
    CandidateFact {
        doc_id: format!("d-{head}"),
        sent_id: 0,
        head_chunk: 0,
        tail_chunk: 1,
        head: NounChunk::new(0, 0, head),
        tail: NounChunk::new(9, 9, tail),
        head_surface: head.into(),
        relation_surface: verb.into(),
        tail_surface: tail.into(),
        relation_positions: positions,
        relation_tokens: tokens,
        raw_degree: normalized_degree * 2.0,
        normalized_degree,
        direction: Direction::Forward,
    }
}

/// `n` facts over a handful of verbs with random degrees, pairs and gaps.
pub fn synthetic_facts<R: Rng>(rng: &mut R, n: usize) -> Vec<CandidateFact<f32>> {
    const VERBS: [&str; 8] = [
        "join", "lead", "found", "sign", "marry", "own", "visit", "praise",
    ];
    (0..n)
        .map(|_| {
            let verb = VERBS[rng.random_range(0..VERBS.len())];
            let h = format!("h{}", rng.random_range(0..30));
            let t = format!("t{}", rng.random_range(0..30));
            let start = rng.random_range(1..4);
            let len = rng.random_range(1..4);
            let mut positions: Vec<usize> = (start..start + len).collect();
            if rng.random_bool(0.2) && len > 1 {
                *positions.last_mut().unwrap() += 1;
            }
            let degree = rng.random_range(0.0f32..0.08);
            fact(&h, &t, verb, positions, degree)
        })
        .collect()
}

pub fn mapped_fact(h: &str, r: &str, t: &str) -> OpenFact<f32> {
    OpenFact {
        category: classify(true, true, true),
        head_surface: h.into(),
        head_entity: Some(h.into()),
        relation_surface: r.into(),
        relation_kg: Some(r.into()),
        relation_normalized: NormalizedPhrase::parse(r).unwrap(),
        tail_surface: t.into(),
        tail_entity: Some(t.into()),
        normalized_degree: 0.1,
        provenance: Provenance {
            doc_id: format!("doc-{h}-{t}"),
            sent_id: 0,
        },
        support: 1,
    }
}

pub fn pipeline_config(
    files: &PlantedFiles,
    out: &Path,
    workers: usize,
    seed: u64,
) -> PipelineConfig {
    PipelineConfig {
        records: vec![files.records_dir.clone()],
        dictionary: Some(files.dictionary.clone()),
        vectors: Some(files.vectors.clone()),
        labels: Some(files.labels.clone()),
        oracle: Some(files.oracle.clone()),
        curation: Some(files.curation.clone()),
        workers,
        seed,
        out: out.to_path_buf(),
        ..PipelineConfig::default()
    }
}

/// Canonical form of a fact set for comparisons: positions to raw degree.
pub fn path_map(paths: &[(Vec<usize>, f32)]) -> BTreeMap<Vec<usize>, u32> {
    paths
        .iter()
        .map(|(p, d)| (p.clone(), d.to_bits()))
        .collect()
}
