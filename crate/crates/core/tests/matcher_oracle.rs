mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use openkg::matcher::{
    beam_search, beam_search_with_stats, enumerate_pairs, match_sentence, ChunkPair, Direction,
    MatchConfig, MatchError, SearchStats,
};

use common::{enumerate_paths, dylan_record, path_map, random_record, total_path_count};

#[test]
fn dylan_top1_is_songwriter() {
    let r = dylan_record();
    let pair = enumerate_pairs(&r, &MatchConfig::default())
        .into_iter()
        .find(|p| p.direction == Direction::Forward)
        .unwrap();
    let facts = beam_search(&r, pair, &r.attention, &MatchConfig::with_beam_size(1)).unwrap();
    assert_eq!(facts.len(), 1);
    let f = &facts[0];
    assert_eq!(
        (
            f.head_surface.as_str(),
            f.relation_surface.as_str(),
            f.tail_surface.as_str()
        ),
        ("Dylan", "is", "songwriter")
    );
    assert_eq!(f.raw_degree.to_bits(), (0.3f32 + 0.4f32).to_bits());
    assert_eq!(f.normalized_degree, (0.3f32 + 0.4f32) / 2.0);
}

#[test]
fn dylan_top1_matches_exhaustive_maximum() {
    let r = dylan_record();
    let paths = enumerate_paths(&r.attention, &r.chunks[0], &r.chunks[1], 8);
    let best = paths
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    assert_eq!(best.0, vec![1]);
    assert_eq!(best.1, 0.3f32 + 0.4f32);
}

#[test]
fn dylan_second_fact_follows_the_oracle() {
    let r = dylan_record();
    let pair = ChunkPair {
        head: 0,
        tail: 1,
        direction: Direction::Forward,
    };
    let facts = beam_search(&r, pair, &r.attention, &MatchConfig::with_beam_size(2)).unwrap();
    // the two-token path through both "is" and "a" outscores the path through "a" alone
    assert_eq!(facts.len(), 2);
    assert_eq!(facts[1].relation_positions, vec![1, 2]);
    assert_eq!(facts[1].raw_degree, 0.3f32 + 0.0 + 0.2);

    let one_token = MatchConfig {
        beam_size: 2,
        max_relation_len: 1,
        ..MatchConfig::default()
    };
    let facts = beam_search(&r, pair, &r.attention, &one_token).unwrap();
    assert_eq!(facts[1].relation_surface, "a");
    assert_eq!(facts[1].raw_degree, 0.1f32 + 0.2f32);
    assert_eq!(facts[1].normalized_degree, (0.1f32 + 0.2f32) / 2.0);
}

#[test]
fn dylan_both_directions() {
    let r = dylan_record();
    let pairs = enumerate_pairs(&r, &MatchConfig::default());
    assert_eq!(pairs.len(), 2);
    let facts = match_sentence(&r, &MatchConfig::with_beam_size(1)).unwrap();
    assert_eq!(facts.len(), 2);
    let backward = facts
        .iter()
        .find(|f| f.direction == Direction::Backward)
        .unwrap();
    let paths = enumerate_paths(&r.attention, &r.chunks[1], &r.chunks[0], 8);
    let best = paths
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    assert_eq!(backward.relation_positions, best.0);
    assert_eq!(backward.raw_degree, best.1);
    assert_eq!(
        match_sentence(&r, &MatchConfig::with_beam_size(1)).unwrap(),
        facts
    );
}

/// With the beam as large as the path space, the search is exhaustive.
#[test]
fn exhaustive_beam_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let r = random_record(&mut rng, n);
        for pair in enumerate_pairs(&r, &MatchConfig::default()) {
            let (head, tail) = (&r.chunks[pair.head], &r.chunks[pair.tail]);
            let cfg = MatchConfig::with_beam_size(total_path_count(head, tail));
            let expected = enumerate_paths(&r.attention, head, tail, cfg.max_relation_len);
            match beam_search(&r, pair, &r.attention, &cfg) {
                Ok(facts) => {
                    let got: Vec<_> = facts
                        .iter()
                        .map(|f| (f.relation_positions.clone(), f.raw_degree))
                        .collect();
                    assert_eq!(path_map(&got), path_map(&expected));
                    assert_eq!(got.len(), expected.len());
                    for f in &facts {
                        let len = f.relation_positions.len() as f32 + 1.0;
                        assert_eq!(f.normalized_degree, f.raw_degree / len);
                    }
                    assert!(facts
                        .windows(2)
                        .all(|w| w[0].normalized_degree >= w[1].normalized_degree));
                }
                Err(MatchError::EmptyResult) => assert!(expected.is_empty()),
                Err(e) => panic!("{e}"),
            }
        }
    }
}

#[test]
fn degrees_replay_from_the_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let n = rng.random_range(3..=12);
        let r = random_record(&mut rng, n);
        for pair in enumerate_pairs(&r, &MatchConfig::default()) {
            let Ok(facts) = beam_search(&r, pair, &r.attention, &MatchConfig::default()) else {
                continue;
            };
            let (head, tail) = (&r.chunks[pair.head], &r.chunks[pair.tail]);
            let (mut cur, edge) = match pair.direction {
                Direction::Forward => (head.last_token, tail.first_token),
                Direction::Backward => (head.first_token, tail.last_token),
            };
            let start = cur;
            for f in facts {
                cur = start;
                let mut degree = 0.0f32;
                for &p in &f.relation_positions {
                    degree += r.attention.get(p, cur);
                    cur = p;
                }
                degree += r.attention.get(edge, cur);
                assert_eq!(degree, f.raw_degree);
                let mut sorted = f.relation_positions.clone();
                sorted.sort_unstable();
                assert_eq!(f.sorted_positions(), sorted);
            }
        }
    }
}

/// The best fact of any beam never beats the exhaustive best.
#[test]
fn exhaustive_best_dominates_every_beam() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let n = rng.random_range(3..=8);
        let r = random_record(&mut rng, n);
        for pair in enumerate_pairs(&r, &MatchConfig::default()) {
            let (head, tail) = (&r.chunks[pair.head], &r.chunks[pair.tail]);
            let full = MatchConfig::with_beam_size(total_path_count(head, tail));
            let Ok(best) = beam_search(&r, pair, &r.attention, &full) else {
                continue;
            };
            for k in 1..=6 {
                if let Ok(facts) =
                    beam_search(&r, pair, &r.attention, &MatchConfig::with_beam_size(k))
                {
                    assert!(facts.len() <= k);
                    assert!(facts[0].normalized_degree <= best[0].normalized_degree);
                }
            }
        }
    }
}

#[test]
fn work_is_bounded_by_beam_depth_and_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..200 {
        let n = rng.random_range(2..=40);
        let r = random_record(&mut rng, n);
        for k in [1, 3, 6] {
            let cfg = MatchConfig::with_beam_size(k);
            for pair in enumerate_pairs(&r, &cfg) {
                let mut stats = SearchStats::default();
                let _ = beam_search_with_stats(&r, pair, &r.attention, &cfg, &mut stats);
                let bound = k * (cfg.max_relation_len + 1) * n;
                assert!(
                    stats.yield_evaluations <= bound,
                    "{} > {bound}",
                    stats.yield_evaluations
                );
                assert!(stats.rounds <= cfg.max_relation_len + 1);
            }
        }
    }
}
