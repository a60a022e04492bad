//! Seeded synthetic corpora with planted relation phrases.
//!
//! Each relation sentence reads `Head <phrase> Tail .` where the planted
//! phrase for a KG relation is used with probability `signal` and a random
//! noise verb otherwise. Attention is strong along the chain of adjacent
//! tokens and weak everywhere else, so the full planted phrase is the best
//! path between head and tail. Open sentences `Head was Tail .` use names that
//! are absent from the dictionary. The generator also emits the dictionary,
//! word vectors, entity labels and oracle KG needed to run the whole pipeline.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    write_records, AttentionTensor, CorpusError, NounChunk, Reduction, SentenceRecord,
    TokenAnnotation, Upos,
};
use crate::evalkit::OracleKg;
use crate::relmap::{normalize_phrase, write_curation_sheet, CurationRow};

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ren", "ta", "vo", "sel", "dra", "nu", "pe", "qui", "zan", "bor", "fe",
    "gal", "hu", "jor", "lin", "mar", "nor", "os", "pri", "ru", "sa",
];

/// One planted token: surface, lemma, POS.
pub type PhraseToken = (String, String, Upos);

#[derive(Debug, Clone)]
pub struct PlantedRelation {
    pub kg_relation: String,
    pub phrase: Vec<PhraseToken>,
}

impl PlantedRelation {
    pub fn new(kg_relation: &str, phrase: &[(&str, &str, Upos)]) -> Self {
        Self {
            kg_relation: kg_relation.to_string(),
            phrase: phrase
                .iter()
                .map(|(t, l, p)| (t.to_string(), l.to_string(), *p))
                .collect(),
        }
    }

    /// Normalized form of the planted phrase.
    pub fn normalized(&self) -> String {
        let toks: Vec<TokenAnnotation> = self
            .phrase
            .iter()
            .map(|(t, l, p)| TokenAnnotation::new(t, l, *p, 0))
            .collect();
        normalize_phrase(&toks)
            .expect("non-empty phrase")
            .into_string()
    }
}

/// Five relations whose planted phrase normalizes to the most frequent
/// sub-phrase of its own beam output.
pub fn default_relations() -> Vec<PlantedRelation> {
    vec![
        PlantedRelation::new(
            "place_of_birth",
            &[
                ("was", "be", Upos::Aux),
                ("born", "bear", Upos::Verb),
                ("in", "in", Upos::Adp),
            ],
        ),
        PlantedRelation::new(
            "employer",
            &[
                ("is", "be", Upos::Aux),
                ("working", "work", Upos::Verb),
                ("for", "for", Upos::Adp),
            ],
        ),
        PlantedRelation::new(
            "spouse",
            &[
                ("is", "be", Upos::Aux),
                ("married", "marry", Upos::Verb),
                ("to", "to", Upos::Adp),
            ],
        ),
        PlantedRelation::new(
            "founded_by",
            &[
                ("was", "be", Upos::Aux),
                ("founded", "found", Upos::Verb),
                ("by", "by", Upos::Adp),
            ],
        ),
        PlantedRelation::new(
            "member_of",
            &[("has", "have", Upos::Aux), ("joined", "join", Upos::Verb)],
        ),
    ]
}

fn default_noise() -> Vec<PhraseToken> {
    [
        ("met", "meet"),
        ("praised", "praise"),
        ("visited", "visit"),
        ("left", "leave"),
        ("thanked", "thank"),
        ("followed", "follow"),
    ]
    .iter()
    .map(|(t, l)| (t.to_string(), l.to_string(), Upos::Verb))
    .collect()
}

#[derive(Debug, Clone)]
pub struct PlantedCorpusConfig {
    pub relations: Vec<PlantedRelation>,
    pub sentences_per_relation: usize,
    /// `Head was Tail .` sentences between names missing from the dictionary.
    pub open_sentences: usize,
    /// Probability that a relation sentence uses its planted phrase.
    pub signal: f64,
    pub noise_phrases: Vec<PhraseToken>,
    /// Oracle slots with no supporting sentence.
    pub unsupported_oracle_facts: usize,
    pub sentences_per_doc: usize,
    pub vector_dim: usize,
    pub seed: u64,
}

impl Default for PlantedCorpusConfig {
    fn default() -> Self {
        Self {
            relations: default_relations(),
            sentences_per_relation: 20,
            open_sentences: 0,
            signal: 0.9,
            noise_phrases: default_noise(),
            unsupported_oracle_facts: 0,
            sentences_per_doc: 5,
            vector_dim: 8,
            seed: 7,
        }
    }
}

impl PlantedCorpusConfig {
    /// 50 sentences: two planted relations, open-schema sentences, and a few
    /// oracle slots without textual support.
    pub fn pipeline_fixture(seed: u64) -> Self {
        Self {
            relations: default_relations().into_iter().take(2).collect(),
            sentences_per_relation: 18,
            open_sentences: 14,
            unsupported_oracle_facts: 4,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub records: Vec<SentenceRecord<f32>>,
    /// `(mention, entity_id, prior)`.
    pub dictionary: Vec<(String, String, f32)>,
    pub vectors: Vec<(String, Vec<f32>)>,
    /// `(entity_id, label)`.
    pub labels: Vec<(String, String)>,
    pub oracle: Vec<(String, String, String)>,
    /// `(normalized phrase, kg_relation)` for every planted mapping.
    pub planted: Vec<(String, String)>,
}

/// Paths of a corpus written to disk.
#[derive(Debug, Clone)]
pub struct PlantedFiles {
    pub records_dir: PathBuf,
    pub partitions: Vec<PathBuf>,
    pub dictionary: PathBuf,
    pub vectors: PathBuf,
    pub labels: PathBuf,
    pub oracle: PathBuf,
    pub curation: PathBuf,
}

fn name(index: usize) -> String {
    let a = SYLLABLES[index % SYLLABLES.len()];
    let b = SYLLABLES[(index / SYLLABLES.len()) % SYLLABLES.len()];
    let c = SYLLABLES[(index / (SYLLABLES.len() * SYLLABLES.len())) % SYLLABLES.len()];
    let mut s = format!("{a}{b}{c}");
    s[..1].make_ascii_uppercase();
    s
}

struct Sentence {
    head: String,
    tail: String,
    phrase: Vec<PhraseToken>,
}

fn build_record(
    sentence: &Sentence,
    doc_id: String,
    sent_id: u64,
    rng: &mut ChaCha8Rng,
) -> SentenceRecord<f32> {
    let mut words: Vec<PhraseToken> =
        vec![(sentence.head.clone(), sentence.head.clone(), Upos::Propn)];
    words.extend(sentence.phrase.iter().cloned());
    words.push((sentence.tail.clone(), sentence.tail.clone(), Upos::Propn));
    words.push((".".into(), ".".into(), Upos::Punct));

    let mut text = String::new();
    let mut tokens = Vec::with_capacity(words.len());
    for (i, (w, lemma, pos)) in words.iter().enumerate() {
        if i > 0 && *pos != Upos::Punct {
            text.push(' ');
        }
        tokens.push(TokenAnnotation::new(w, lemma, *pos, text.len()));
        text.push_str(w);
    }
    let n = tokens.len();
    let tail_pos = n - 2;
    let chunks = vec![
        NounChunk::new(0, 0, &sentence.head),
        NounChunk::new(tail_pos, tail_pos, &sentence.tail),
    ];
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let v = if i == j + 1 {
                rng.random_range(0.4f32..0.6)
            } else {
                rng.random_range(0.0005f32..0.0015)
            };
            values.push(v);
        }
    }
    SentenceRecord {
        doc_id,
        sent_id,
        text,
        tokens,
        chunks,
        attention: AttentionTensor::reduced(n, values, "last", Reduction::Mean)
            .expect("generated attention is valid"),
    }
}

impl PlantedCorpus {
    pub fn generate(cfg: &PlantedCorpusConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut next_name = 0usize;
        let mut fresh = || {
            next_name += 1;
            name(next_name)
        };

        let mut sentences = Vec::new();
        let mut dictionary = Vec::new();
        let mut labels = Vec::new();
        let mut oracle = Vec::new();
        let mut vocab: Vec<String> = vec![".".into(), "was".into(), "decoy".into()];

        let add_entity = |display: &str,
                          dictionary: &mut Vec<(String, String, f32)>,
                          labels: &mut Vec<(String, String)>|
         -> String {
            let id = format!("Q{}", 1000 + labels.len() / 2);
            dictionary.push((display.to_string(), id.clone(), 0.9));
            labels.push((id.clone(), display.to_string()));
            // a low-prior homonym whose label points away from every context
            let decoy = format!("Q{}", 900_000 + labels.len() / 2);
            dictionary.push((display.to_string(), decoy.clone(), 0.1));
            labels.push((decoy, "decoy".into()));
            id
        };

        for rel in &cfg.relations {
            vocab.extend(rel.phrase.iter().map(|(t, _, _)| t.to_lowercase()));
            for _ in 0..cfg.sentences_per_relation {
                let (head, tail) = (fresh(), fresh());
                let h_id = add_entity(&head, &mut dictionary, &mut labels);
                let t_id = add_entity(&tail, &mut dictionary, &mut labels);
                oracle.push((h_id, rel.kg_relation.clone(), t_id));
                let phrase = if rng.random_bool(cfg.signal) || cfg.noise_phrases.is_empty() {
                    rel.phrase.clone()
                } else {
                    vec![cfg.noise_phrases[rng.random_range(0..cfg.noise_phrases.len())].clone()]
                };
                vocab.push(head.to_lowercase());
                vocab.push(tail.to_lowercase());
                sentences.push(Sentence { head, tail, phrase });
            }
            for _ in 0..cfg
                .unsupported_oracle_facts
                .div_ceil(cfg.relations.len().max(1))
            {
                let (head, tail) = (fresh(), fresh());
                let h_id = add_entity(&head, &mut dictionary, &mut labels);
                let t_id = add_entity(&tail, &mut dictionary, &mut labels);
                oracle.push((h_id, rel.kg_relation.clone(), t_id));
            }
        }
        vocab.extend(cfg.noise_phrases.iter().map(|(t, _, _)| t.to_lowercase()));
        for _ in 0..cfg.open_sentences {
            let (head, tail) = (fresh(), fresh());
            vocab.push(head.to_lowercase());
            vocab.push(tail.to_lowercase());
            sentences.push(Sentence {
                head,
                tail,
                phrase: vec![("was".into(), "be".into(), Upos::Aux)],
            });
        }

        sentences.shuffle(&mut rng);
        let per_doc = cfg.sentences_per_doc.max(1);
        let records = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                build_record(
                    s,
                    format!("doc{:04}", i / per_doc),
                    (i % per_doc) as u64,
                    &mut rng,
                )
            })
            .collect();

        vocab.sort();
        vocab.dedup();
        let dim = cfg.vector_dim.max(2);
        let vectors = vocab
            .into_iter()
            .map(|w| {
                let v: Vec<f32> = if w == "decoy" {
                    (0..dim).map(|d| if d == 1 { 1.0 } else { 0.0 }).collect()
                } else {
                    (0..dim)
                        .map(|d| {
                            if d == 0 {
                                1.0
                            } else {
                                rng.random_range(-0.05f32..0.05)
                            }
                        })
                        .collect()
                };
                (w, v)
            })
            .collect();

        let planted = cfg
            .relations
            .iter()
            .map(|r| (r.normalized(), r.kg_relation.clone()))
            .collect();

        Self {
            records,
            dictionary,
            vectors,
            labels,
            oracle,
            planted,
        }
    }

    pub fn oracle_kg(&self) -> OracleKg {
        OracleKg::from_triples(self.oracle.iter().cloned())
    }

    /// Curation sheet approving exactly the planted mappings.
    pub fn planted_curation(&self) -> Vec<CurationRow> {
        self.planted
            .iter()
            .map(|(phrase, rel)| CurationRow {
                phrase: phrase.clone(),
                kg_relation: rel.clone(),
                count: 1,
                approved: true,
            })
            .collect()
    }

    /// Writes every artifact under `dir`, splitting records round-robin into
    /// `partitions` files.
    pub fn write_to(&self, dir: &Path, partitions: usize) -> Result<PlantedFiles, CorpusError> {
        let records_dir = dir.join("records");
        fs::create_dir_all(&records_dir)?;
        let partitions = partitions.max(1);
        let mut paths = Vec::with_capacity(partitions);
        for p in 0..partitions {
            let part: Vec<_> = self
                .records
                .iter()
                .skip(p)
                .step_by(partitions)
                .cloned()
                .collect();
            let path = records_dir.join(format!("part-{p}.senrec.jsonl"));
            write_records(&part, BufWriter::new(fs::File::create(&path)?))?;
            paths.push(path);
        }

        let dictionary = dir.join("dictionary.tsv");
        let mut w = BufWriter::new(fs::File::create(&dictionary)?);
        for (m, e, p) in &self.dictionary {
            writeln!(w, "{m}\t{e}\t{p}")?;
        }
        w.flush()?;

        let vectors = dir.join("vectors.txt");
        let mut w = BufWriter::new(fs::File::create(&vectors)?);
        for (tok, v) in &self.vectors {
            let comps: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{tok} {}", comps.join(" "))?;
        }
        w.flush()?;

        let labels = dir.join("labels.tsv");
        let mut w = BufWriter::new(fs::File::create(&labels)?);
        for (id, label) in &self.labels {
            writeln!(w, "{id}\t{label}")?;
        }
        w.flush()?;

        let oracle = dir.join("oracle.tsv");
        self.oracle_kg()
            .write_tsv(BufWriter::new(fs::File::create(&oracle)?))?;

        let curation = dir.join("curation.tsv");
        write_curation_sheet(
            &self.planted_curation(),
            BufWriter::new(fs::File::create(&curation)?),
        )?;

        Ok(PlantedFiles {
            records_dir,
            partitions: paths,
            dictionary,
            vectors,
            labels,
            oracle,
            curation,
        })
    }
}
