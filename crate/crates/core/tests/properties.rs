mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use openkg::corpus::{
    read_records, reduce_attention, write_records, AttentionTensor, HeadReduction, SentenceRecord,
};
use openkg::evalkit::{score_slot_filling, OracleKg};
use openkg::filters::{apply_filters, collect_stats, fact_phrase, FilterConfig, RelationStats};
use openkg::kg::{self, OpenFact};
use openkg::linker::{link_mention, EntityLabels, MentionDictionary, WordVectors};
use openkg::relmap::{build_relation_map, CountMode, PhraseObservation};

use common::{mapped_fact, random_record, synthetic_facts};

type Obs = (String, Option<String>, Option<String>);

fn view(o: &[Obs]) -> Vec<PhraseObservation<'_>> {
    o.iter()
        .map(|(p, h, t)| PhraseObservation {
            phrase: p,
            head_entity: h.as_deref(),
            tail_entity: t.as_deref(),
        })
        .collect()
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn records_round_trip(seed in any::<u64>(), count in 0usize..6) {
        let mut rng = seeded(seed);
        let records: Vec<SentenceRecord<f32>> = (0..count)
            .map(|i| {
                let n = 2 + (seed as usize + i) % 9;
                let mut r = random_record(&mut rng, n);
                r.sent_id = i as u64;
                r
            })
            .collect();
        let mut buf = Vec::new();
        prop_assert_eq!(write_records(&records, &mut buf).unwrap(), count);
        let back: Vec<SentenceRecord<f32>> = read_records(buf.as_slice()).collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, records);
    }

    #[test]
    fn mean_reduction_stays_in_head_range(
        heads in 1usize..6,
        dim in 1usize..6,
        values in proptest::collection::vec(0.0f32..1.0, 180),
    ) {
        let cells = dim * dim;
        let values = values[..heads * cells].to_vec();
        let att = AttentionTensor::per_head(heads, dim, values.clone(), "last").unwrap();
        let mean = reduce_attention(&att, HeadReduction::Mean).unwrap();
        let max = reduce_attention(&att, HeadReduction::Max).unwrap();
        for c in 0..cells {
            let column: Vec<f32> = (0..heads).map(|h| values[h * cells + c]).collect();
            let lo = column.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = column.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let v = mean.values()[c];
            prop_assert!(lo <= v && v <= hi);
            let mut expected = column[0];
            for x in &column[1..] {
                if *x > expected {
                    expected = *x;
                }
            }
            prop_assert_eq!(max.values()[c], expected);
        }
    }

    #[test]
    fn filtering_is_idempotent_and_monotone(seed in any::<u64>(), t1 in 0.0f32..0.06, t2 in 0.0f32..0.06, m in 1usize..20) {
        let facts = synthetic_facts(&mut seeded(seed), 200);
        let stats = collect_stats(&facts, fact_phrase);
        let lo = FilterConfig { degree_threshold: t1.min(t2), min_distinct_pairs: m, require_contiguous: true };
        let hi = FilterConfig { degree_threshold: t1.max(t2), min_distinct_pairs: m + 3, require_contiguous: true };
        let out_lo = apply_filters(facts.clone(), &stats, &lo);
        let out_hi = apply_filters(facts.clone(), &stats, &hi);
        prop_assert_eq!(out_lo.kept.len() + out_lo.rejected.len(), facts.len());
        prop_assert!(out_hi.kept.iter().all(|f| out_lo.kept.contains(f)));
        let again = apply_filters(out_lo.kept.clone(), &stats, &lo);
        prop_assert_eq!(again.kept, out_lo.kept);
    }

    #[test]
    fn stats_are_partition_invariant(seed in any::<u64>(), parts in 1usize..8) {
        let facts = synthetic_facts(&mut seeded(seed), 150);
        let whole = collect_stats(&facts, fact_phrase);
        let chunk = facts.len().div_ceil(parts);
        let mut merged = RelationStats::new();
        for part in facts.chunks(chunk).rev() {
            merged.merge(&collect_stats(part, fact_phrase));
        }
        prop_assert_eq!(whole.to_counts(), merged.to_counts());
        let mut twice = merged.clone();
        twice.merge(&merged);
        prop_assert_eq!(twice.to_counts(), merged.to_counts());
    }

    #[test]
    fn relation_map_ignores_order(seed in any::<u64>(), per_pair in any::<bool>()) {
        let mut rng = seeded(seed);
        let oracle = OracleKg::from_triples((0..20).map(|i| (format!("H{}", i % 7), format!("r{}", i % 3), format!("T{}", i % 5))));
        let phrases = ["bear in", "work for", "join", "be"];
        let obs: Vec<Obs> = (0..120)
            .map(|i| {
                let h = (i % 9 != 0).then(|| format!("H{}", i % 7));
                let t = (i % 11 != 0).then(|| format!("T{}", (i * 3) % 5));
                (phrases[i % phrases.len()].to_string(), h, t)
            })
            .collect();
        let mode = if per_pair { CountMode::PerPair } else { CountMode::PerFact };
        let a = build_relation_map(view(&obs), &oracle, mode);
        let mut shuffled = obs.clone();
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(&build_relation_map(view(&shuffled), &oracle, mode), &a);
        if !per_pair {
            let (left, right) = shuffled.split_at(50);
            let mut merged = build_relation_map(view(left), &oracle, mode);
            merged.merge_counts(&build_relation_map(view(right), &oracle, mode));
            prop_assert_eq!(merged, a);
        }
    }

    #[test]
    fn linking_ignores_vector_scale(seed in any::<u64>(), exp in -6i32..6) {
        let mut rng = seeded(seed);
        let r = random_record(&mut rng, 6);
        let mut vectors = WordVectors::<f32>::new(3);
        for (i, t) in r.tokens.iter().enumerate() {
            let x = (seed.rotate_left(i as u32 * 7) % 1000) as f32 / 1000.0;
            vectors.insert(&t.text, vec![1.0, x, 1.0 - x]).unwrap();
        }
        vectors.insert("label", vec![1.0, 0.5, 0.5]).unwrap();
        vectors.insert("other", vec![0.0, 1.0, -1.0]).unwrap();
        let head = &r.chunks[0];
        let dict = MentionDictionary::from_rows([
            (head.surface.clone(), "Q1".to_string(), 0.6f32),
            (head.surface.clone(), "Q2".to_string(), 0.4f32),
        ])
        .unwrap();
        let mut labels = EntityLabels::default();
        labels.insert("Q1", "other");
        labels.insert("Q2", "label");
        let scaled = vectors.scaled(2f32.powi(exp));
        let a = link_mention(head, &r, &dict, &vectors, &labels, 0.25);
        let b = link_mention(head, &r, &dict, &scaled, &labels, 0.25);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn assembly_is_idempotent_and_order_free(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let mut facts: Vec<OpenFact<f32>> = (0..60)
            .map(|i| {
                let mut f = mapped_fact(&format!("H{}", i % 9), &format!("r{}", i % 2), &format!("T{}", i % 4));
                f.normalized_degree = (i % 13) as f32 / 10.0;
                f.provenance.sent_id = i as u64;
                if i % 3 == 0 {
                    f.relation_kg = None;
                    f.category = kg::classify(true, false, true);
                }
                f
            })
            .collect();
        let kg1 = kg::OpenKg::from_facts(facts.clone());
        facts.shuffle(&mut rng);
        let kg2 = kg::OpenKg::from_facts(facts);
        prop_assert_eq!(&kg1, &kg2);
        let kg3 = kg::OpenKg::from_facts(kg1.facts().to_vec());
        prop_assert_eq!(kg3.facts(), kg1.facts());
        let total: u32 = kg1.facts().iter().map(|f| f.support).sum();
        prop_assert_eq!(total, 60);
    }

    #[test]
    fn scoring_ignores_order_and_duplicates(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let oracle = OracleKg::from_triples((0..8).map(|i| (format!("H{i}"), "r".to_string(), format!("T{i}"))));
        let mut preds: Vec<OpenFact<f32>> = (0..12)
            .map(|i| mapped_fact(&format!("H{}", i % 10), "r", &format!("T{}", (i * 7) % 9)))
            .collect();
        let base = score_slot_filling(&preds, &oracle, false);
        let dup = preds[3].clone();
        preds.push(dup);
        preds.shuffle(&mut rng);
        prop_assert_eq!(score_slot_filling(&preds, &oracle, false), base);
    }
}

#[test]
fn per_fact_counts_match_brute_force() {
    let oracle = OracleKg::from_triples([
        (
            "A".to_string(),
            "place_of_birth".to_string(),
            "X".to_string(),
        ),
        (
            "B".to_string(),
            "place_of_birth".to_string(),
            "Y".to_string(),
        ),
    ]);
    let obs = [
        ("bear in", "A", "X"),
        ("bear in", "B", "Y"),
        ("bear in", "A", "X"),
        ("bear in", "C", "X"),
        ("live in", "A", "X"),
    ];
    let map = build_relation_map(
        obs.iter().map(|(p, h, t)| PhraseObservation {
            phrase: p,
            head_entity: Some(h),
            tail_entity: Some(t),
        }),
        &oracle,
        CountMode::PerFact,
    );
    let mut brute: BTreeMap<(String, String), u64> = BTreeMap::new();
    for (p, h, t) in obs {
        for (oh, r, ot) in [("A", "place_of_birth", "X"), ("B", "place_of_birth", "Y")] {
            if oh == h && ot == t {
                *brute.entry((p.to_string(), r.to_string())).or_default() += 1;
            }
        }
    }
    assert_eq!(map.counts(), &brute);
    assert_eq!(map.count("bear in", "place_of_birth"), 3);
}
