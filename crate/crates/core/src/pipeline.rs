//! Partitioned end-to-end pipeline: match, stats, filter, link, build-relmap,
//! map, assemble, export, score.
//!
//! Partition files are processed by a fixed-size worker pool; every output is a
//! pure function of the inputs and the semantic part of the config, so runs with
//! different worker counts produce the same bytes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ensure_reduced, read_records, HeadReduction};
use crate::evalkit::{sample_for_review, score_slot_filling, write_review_sheet, OracleKg};
use crate::filters::{apply_filters, collect_stats, fact_phrase, RelationStats};
use crate::kg::{self, ExportFormat};
use crate::linker::{EntityLabels, DEFAULT_LINK_THRESHOLD};
use crate::matcher::{match_sentence, MatchConfig};
use crate::relmap::{
    build_relation_map, read_curation_sheet, write_curation_sheet, CountMode, PhraseObservation,
    RelationMap, DEFAULT_REVIEW_DEPTH,
};
use crate::scalar::Scalar;
use crate::{
    CandidateFact, FilterConfig, LinkedFact, Linker, MentionDictionary, OpenKg, Real, ScoreReport,
    SentenceRecord, WordVectors,
};

pub const RECORD_SUFFIX: &str = ".senrec.jsonl";
pub const STAGES: [&str; 9] = [
    "match",
    "stats",
    "filter",
    "link",
    "build-relmap",
    "map",
    "assemble",
    "export",
    "score",
];

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{name} not found: {}", path.display())]
    MissingInput { name: &'static str, path: PathBuf },
    #[error("cannot parse {name} {}: {message}", path.display())]
    BadInput {
        name: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error("stage {stage} failed: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub matching: MatchConfig,
    pub filter: FilterConfig,
    pub link_threshold: Real,
    pub head_reduction: HeadReduction,
    pub count_mode: CountMode,
    pub strict_precision: bool,
    /// Number of unmapped facts drawn for the review sheet.
    pub review_sample: usize,
    /// Number of phrases per KG relation on the curation sheet.
    pub review_depth: usize,
    pub seed: u64,
    pub workers: usize,
    /// Partition files, or directories holding `*.senrec.jsonl` files.
    pub records: Vec<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub oracle: Option<PathBuf>,
    /// Edited curation sheet; without one nothing is mapped.
    pub curation: Option<PathBuf>,
    /// Prebuilt relation-map counts used instead of building them.
    pub relation_counts: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            matching: MatchConfig::default(),
            filter: FilterConfig::default(),
            link_threshold: DEFAULT_LINK_THRESHOLD as Real,
            head_reduction: HeadReduction::Mean,
            count_mode: CountMode::PerFact,
            strict_precision: false,
            review_sample: 100,
            review_depth: DEFAULT_REVIEW_DEPTH,
            seed: 0,
            workers: 1,
            records: Vec::new(),
            dictionary: None,
            vectors: None,
            labels: None,
            oracle: None,
            curation: None,
            relation_counts: None,
            out: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|_| PipelineError::MissingInput {
            name: "config",
            path: path.to_path_buf(),
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        self.matching
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.filter.validate().map_err(PipelineError::Config)?;
        if !(self.link_threshold >= 0.0 && self.link_threshold <= 1.0) {
            return Err(PipelineError::Config(
                "link_threshold must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Hash of the settings that determine output contents. Worker count and
    /// file locations are left out.
    pub fn semantic_hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.workers = 0;
        semantic.out = PathBuf::new();
        semantic.records.clear();
        for p in [
            &mut semantic.dictionary,
            &mut semantic.vectors,
            &mut semantic.labels,
            &mut semantic.oracle,
            &mut semantic.curation,
            &mut semantic.relation_counts,
        ] {
            if p.is_some() {
                *p = Some(PathBuf::new());
            }
        }
        let json = serde_json::to_vec(&semantic).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, PipelineError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}

fn required<'a>(path: &'a Option<PathBuf>, name: &'static str) -> Result<&'a Path, PipelineError> {
    path.as_deref()
        .ok_or_else(|| PipelineError::Config(format!("no {name} given")))
}

fn open(path: &Path, name: &'static str) -> Result<BufReader<fs::File>, PipelineError> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|_| PipelineError::MissingInput {
            name,
            path: path.to_path_buf(),
        })
}

fn load<T, E: std::fmt::Display>(
    path: &Path,
    name: &'static str,
    parse: impl FnOnce(BufReader<fs::File>) -> Result<T, E>,
) -> Result<T, PipelineError> {
    parse(open(path, name)?).map_err(|e| PipelineError::BadInput {
        name,
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Expands directories to their `*.senrec.jsonl` files; the result is sorted by
/// file name so partition indices do not depend on the order paths were given.
pub fn discover_partitions(paths: &[PathBuf]) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for entry in fs::read_dir(p)? {
                let path = entry?.path();
                let is_record = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(RECORD_SUFFIX));
                if is_record && path.is_file() {
                    out.push(path);
                }
            }
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(PipelineError::MissingInput {
                name: "records",
                path: p.clone(),
            });
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()).then_with(|| a.cmp(b)));
    out.dedup();
    Ok(out)
}

pub fn load_linker(cfg: &PipelineConfig) -> Result<Linker, PipelineError> {
    let dictionary = load(
        required(&cfg.dictionary, "dictionary")?,
        "dictionary",
        MentionDictionary::read_tsv,
    )?;
    let vectors = load(
        required(&cfg.vectors, "vectors")?,
        "vectors",
        WordVectors::read_text,
    )?;
    let labels = load(
        required(&cfg.labels, "labels")?,
        "labels",
        EntityLabels::read_tsv,
    )?;
    Ok(Linker {
        dictionary,
        vectors,
        labels,
        threshold: cfg.link_threshold,
    })
}

pub fn load_oracle(cfg: &PipelineConfig) -> Result<OracleKg, PipelineError> {
    load(
        required(&cfg.oracle, "oracle")?,
        "oracle",
        OracleKg::read_tsv,
    )
}

/// Loads prebuilt counts if configured, then the curation sheet if any.
fn load_relmap_inputs(
    cfg: &PipelineConfig,
) -> Result<(Option<RelationMap>, Option<Vec<crate::relmap::CurationRow>>), PipelineError> {
    let counts = cfg
        .relation_counts
        .as_deref()
        .map(|p| load(p, "relation counts", RelationMap::read_counts))
        .transpose()?;
    let curation = cfg
        .curation
        .as_deref()
        .map(|p| load(p, "curation sheet", read_curation_sheet))
        .transpose()?;
    Ok((counts, curation))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in open(path, "input")?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| PipelineError::BadInput {
                name: "jsonl input",
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, PipelineError> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub partition: String,
    pub records: usize,
    pub failures: usize,
    pub candidates: usize,
}

/// Candidate facts of one partition file. Unreadable or duplicate records are
/// logged and counted; only an I/O failure on the file itself is an error.
pub fn match_partition(
    path: &Path,
    cfg: &PipelineConfig,
) -> Result<(Vec<CandidateFact>, PartitionSummary), PipelineError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut summary = PartitionSummary {
        partition: name.clone(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut facts = Vec::new();
    for item in read_records::<_, Real>(open(path, "records")?) {
        let record = match item {
            Ok(r) => r,
            Err(crate::corpus::CorpusError::Io(e)) => return Err(e.into()),
            Err(e) => {
                log::warn!("{name}: skipping record: {e}");
                summary.failures += 1;
                continue;
            }
        };
        if !seen.insert((record.doc_id.clone(), record.sent_id)) {
            log::warn!(
                "{name}: duplicate record {}#{}",
                record.doc_id,
                record.sent_id
            );
            summary.failures += 1;
            continue;
        }
        let record = ensure_reduced(record, cfg.head_reduction);
        match match_sentence(&record, &cfg.matching) {
            Ok(found) => {
                summary.records += 1;
                facts.extend(found);
            }
            Err(e) => {
                log::warn!("{name}: {}#{}: {e}", record.doc_id, record.sent_id);
                summary.failures += 1;
            }
        }
    }
    summary.candidates = facts.len();
    Ok((facts, summary))
}

fn warn_cross_partition_duplicates(parts: &[Vec<CandidateFact>]) {
    let mut owner: HashMap<(&str, u64), usize> = HashMap::new();
    for (k, facts) in parts.iter().enumerate() {
        for f in facts {
            if let Some(&other) = owner.get(&(f.doc_id.as_str(), f.sent_id)) {
                if other != k {
                    log::warn!(
                        "record {}#{} appears in partitions {other} and {k}",
                        f.doc_id,
                        f.sent_id
                    );
                }
            } else {
                owner.insert((f.doc_id.as_str(), f.sent_id), k);
            }
        }
    }
}

/// Per-partition candidate facts written as `candidates/part-<k>.cand.jsonl`.
#[derive(Debug, Clone)]
pub struct MatchOutput {
    pub partitions: Vec<PathBuf>,
    pub facts: Vec<Vec<CandidateFact>>,
    pub summaries: Vec<PartitionSummary>,
    pub files: Vec<PathBuf>,
}

pub fn run_match(cfg: &PipelineConfig) -> Result<MatchOutput, PipelineError> {
    cfg.validate()?;
    let partitions = discover_partitions(&cfg.records)?;
    let dir = cfg.out.join("candidates");
    fs::create_dir_all(&dir)?;
    let results: Vec<_> = cfg.pool()?.install(|| {
        partitions
            .par_iter()
            .map(|p| match_partition(p, cfg))
            .collect()
    });
    let mut facts = Vec::with_capacity(results.len());
    let mut summaries = Vec::with_capacity(results.len());
    let mut files = Vec::with_capacity(results.len());
    for (k, r) in results.into_iter().enumerate() {
        let (f, s) = r?;
        let file = dir.join(format!("part-{k}.cand.jsonl"));
        write_jsonl(&file, &f)?;
        log::info!(
            "{}: {} records, {} failures, {} candidates",
            s.partition,
            s.records,
            s.failures,
            s.candidates
        );
        files.push(file);
        facts.push(f);
        summaries.push(s);
    }
    warn_cross_partition_duplicates(&facts);
    Ok(MatchOutput {
        partitions,
        facts,
        summaries,
        files,
    })
}

/// First pass of the filter: exact distinct-pair sets per normalized phrase,
/// merged over partitions.
pub fn partition_stats(
    cfg: &PipelineConfig,
    parts: &[Vec<CandidateFact>],
) -> Result<RelationStats, PipelineError> {
    let partials: Vec<RelationStats> = cfg.pool()?.install(|| {
        parts
            .par_iter()
            .map(|facts| collect_stats(facts, fact_phrase))
            .collect()
    });
    let mut stats = RelationStats::new();
    for p in &partials {
        stats.merge(p);
    }
    Ok(stats)
}

/// Links facts, re-reading the records they came from for context.
pub fn link_facts(
    record_files: &[PathBuf],
    facts: Vec<CandidateFact>,
    linker: &Linker,
    head_reduction: HeadReduction,
) -> Result<Vec<LinkedFact>, PipelineError> {
    let wanted: HashSet<(String, u64)> = facts
        .iter()
        .map(|f| (f.doc_id.clone(), f.sent_id))
        .collect();
    let mut records: HashMap<(String, u64), SentenceRecord> = HashMap::new();
    for path in record_files.iter().filter(|_| !wanted.is_empty()) {
        for item in read_records::<_, Real>(open(path, "records")?) {
            let Ok(record) = item else { continue };
            let key = (record.doc_id.clone(), record.sent_id);
            if wanted.contains(&key) && !records.contains_key(&key) {
                records.insert(key, ensure_reduced(record, head_reduction));
            }
        }
    }
    let mut out = Vec::with_capacity(facts.len());
    for fact in facts {
        let Some(record) = records.get(&(fact.doc_id.clone(), fact.sent_id)) else {
            log::warn!("no record for candidate {}#{}", fact.doc_id, fact.sent_id);
            continue;
        };
        let head = record.chunks.get(fact.head_chunk).cloned();
        let tail = record.chunks.get(fact.tail_chunk).cloned();
        let Some(mut linked) = LinkedFact::new(fact) else {
            continue;
        };
        linked.head_link = head.and_then(|c| linker.link(&c, record));
        linked.tail_link = tail.and_then(|c| linker.link(&c, record));
        out.push(linked);
    }
    Ok(out)
}

/// Relation-map counts over every linked fact.
pub fn build_counts(facts: &[LinkedFact], oracle: &OracleKg, mode: CountMode) -> RelationMap {
    build_relation_map(
        facts.iter().map(|f| PhraseObservation {
            phrase: f.relation_normalized.as_str(),
            head_entity: f.head_entity(),
            tail_entity: f.tail_entity(),
        }),
        oracle,
        mode,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub millis: u64,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub workers: usize,
    pub inputs: Vec<FileDigest>,
    pub stages: Vec<StageRecord>,
    pub partitions: Vec<PartitionSummary>,
}

/// The reproducible part of a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checksums {
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub stage_outputs: Vec<(String, Vec<FileDigest>)>,
}

impl Manifest {
    /// Everything except timings and worker count; equal for reproducible runs.
    pub fn checksums(&self) -> Checksums {
        Checksums {
            config_hash: self.config_hash.clone(),
            inputs: self.inputs.clone(),
            stage_outputs: self
                .stages
                .iter()
                .map(|s| (s.name.clone(), s.outputs.clone()))
                .collect(),
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn digest(path: &Path, root: Option<&Path>) -> Result<FileDigest, PipelineError> {
    let shown = match root.and_then(|r| path.strip_prefix(r).ok()) {
        Some(rel) => rel.to_string_lossy().replace('\\', "/"),
        None => path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    Ok(FileDigest {
        path: shown,
        sha256: sha256_file(path)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreFile<'a> {
    #[serde(flatten)]
    pub report: &'a ScoreReport,
    pub config: &'a PipelineConfig,
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub kg: OpenKg,
    pub report: ScoreReport,
    pub manifest: Manifest,
}

struct StageTimer<'a> {
    out: &'a Path,
    stages: Vec<StageRecord>,
}

impl StageTimer<'_> {
    fn finish(
        &mut self,
        name: &str,
        started: Instant,
        outputs: &[PathBuf],
    ) -> Result<(), PipelineError> {
        let outputs = outputs
            .iter()
            .map(|p| digest(p, Some(self.out)))
            .collect::<Result<_, _>>()?;
        self.stages.push(StageRecord {
            name: name.to_string(),
            millis: started.elapsed().as_millis() as u64,
            outputs,
        });
        log::info!("stage {name} done in {} ms", started.elapsed().as_millis());
        Ok(())
    }
}

/// Runs every stage in order and writes `manifest.json` under `cfg.out`.
///
/// All inputs are loaded and parsed before the output directory is touched.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let partitions = discover_partitions(&cfg.records)?;
    let linker = load_linker(cfg)?;
    let oracle = load_oracle(cfg)?;
    let (prebuilt_counts, curation) = load_relmap_inputs(cfg)?;

    let mut inputs = Vec::new();
    for p in &partitions {
        inputs.push(digest(p, None)?);
    }
    for p in [
        &cfg.dictionary,
        &cfg.vectors,
        &cfg.labels,
        &cfg.oracle,
        &cfg.curation,
        &cfg.relation_counts,
    ]
    .into_iter()
    .flatten()
    {
        inputs.push(digest(p, None)?);
    }

    fs::create_dir_all(&cfg.out)?;
    let out = cfg.out.as_path();
    let pool = cfg.pool()?;
    let mut timer = StageTimer {
        out,
        stages: Vec::new(),
    };

    let t = Instant::now();
    let matched = run_match(cfg).map_err(|e| match e {
        PipelineError::Stage { .. } => e,
        other => stage_err("match")(other),
    })?;
    timer.finish("match", t, &matched.files)?;

    let t = Instant::now();
    let stats = partition_stats(cfg, &matched.facts)?;
    let stats_path = out.join("relation_stats.tsv");
    stats
        .write_tsv(create(&stats_path)?)
        .map_err(stage_err("stats"))?;
    timer.finish("stats", t, std::slice::from_ref(&stats_path))?;

    let t = Instant::now();
    let filtered_dir = out.join("filtered");
    fs::create_dir_all(&filtered_dir).map_err(stage_err("filter"))?;
    let mut kept_parts = Vec::with_capacity(matched.facts.len());
    let mut filter_files = Vec::new();
    for (k, facts) in matched.facts.into_iter().enumerate() {
        let outcome = apply_filters(facts, &stats, &cfg.filter);
        let kept = filtered_dir.join(format!("part-{k}.kept.jsonl"));
        let rejected = filtered_dir.join(format!("part-{k}.rejected.jsonl"));
        write_jsonl(&kept, &outcome.kept).map_err(stage_err("filter"))?;
        write_jsonl(&rejected, &outcome.rejected).map_err(stage_err("filter"))?;
        filter_files.push(kept);
        filter_files.push(rejected);
        kept_parts.push(outcome.kept);
    }
    timer.finish("filter", t, &filter_files)?;

    let t = Instant::now();
    let linked_parts: Vec<Result<Vec<LinkedFact>, PipelineError>> = pool.install(|| {
        partitions
            .par_iter()
            .zip(kept_parts.into_par_iter())
            .map(|(path, facts)| {
                link_facts(
                    std::slice::from_ref(path),
                    facts,
                    &linker,
                    cfg.head_reduction,
                )
            })
            .collect()
    });
    let linked_dir = out.join("linked");
    fs::create_dir_all(&linked_dir).map_err(stage_err("link"))?;
    let mut linked = Vec::new();
    let mut link_files = Vec::new();
    for (k, part) in linked_parts.into_iter().enumerate() {
        let part = part.map_err(stage_err("link"))?;
        let file = linked_dir.join(format!("part-{k}.linked.jsonl"));
        write_jsonl(&file, &part).map_err(stage_err("link"))?;
        link_files.push(file);
        linked.extend(part);
    }
    timer.finish("link", t, &link_files)?;

    let t = Instant::now();
    let mut relmap =
        prebuilt_counts.unwrap_or_else(|| build_counts(&linked, &oracle, cfg.count_mode));
    let counts_path = out.join("relmap.counts.tsv");
    relmap
        .write_counts(create(&counts_path)?)
        .map_err(stage_err("build-relmap"))?;
    let sheet_path = out.join("relmap.review.tsv");
    write_curation_sheet(
        &relmap.curation_sheet(cfg.review_depth),
        create(&sheet_path)?,
    )
    .map_err(stage_err("build-relmap"))?;
    if let Some(rows) = &curation {
        let ignored = relmap.apply_curation(rows);
        if ignored > 0 {
            log::warn!(
                "{ignored} approved curation rows have no co-occurrence count and were ignored"
            );
        }
    }
    timer.finish("build-relmap", t, &[counts_path, sheet_path])?;

    let t = Instant::now();
    kg::map_facts(&mut linked, &relmap);
    let mapped_path = out.join("mapped.jsonl");
    write_jsonl(&mapped_path, &linked).map_err(stage_err("map"))?;
    timer.finish("map", t, std::slice::from_ref(&mapped_path))?;

    let t = Instant::now();
    let graph: OpenKg = kg::assemble(&linked);
    timer.finish("assemble", t, &[])?;

    let t = Instant::now();
    let mut export_files = Vec::new();
    for fmt in [ExportFormat::Jsonl, ExportFormat::Tsv, ExportFormat::Dot] {
        let path = out.join(format!("kg.{}", fmt.extension()));
        kg::export(&graph, fmt, create(&path)?).map_err(stage_err("export"))?;
        export_files.push(path);
    }
    let unmapped: Vec<_> = graph
        .facts()
        .iter()
        .filter(|f| f.category != kg::Category::Mapped)
        .cloned()
        .collect();
    let review_path = out.join("review.tsv");
    write_review_sheet(
        &sample_for_review(&unmapped, cfg.review_sample, cfg.seed),
        create(&review_path)?,
    )
    .map_err(stage_err("export"))?;
    export_files.push(review_path);
    timer.finish("export", t, &export_files)?;

    let t = Instant::now();
    let report: ScoreReport = score_slot_filling(graph.facts(), &oracle, cfg.strict_precision);
    let score_path = out.join("score.json");
    let mut w = create(&score_path)?;
    serde_json::to_writer_pretty(
        &mut w,
        &ScoreFile {
            report: &report,
            config: cfg,
        },
    )
    .map_err(stage_err("score"))?;
    w.write_all(b"\n")?;
    w.flush()?;
    // the config echo carries paths, so only the report part is checksummed
    let report_path = out.join("score.report.json");
    let mut w = create(&report_path)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(stage_err("score"))?;
    w.write_all(b"\n")?;
    w.flush()?;
    timer.finish("score", t, std::slice::from_ref(&report_path))?;

    let manifest = Manifest {
        config_hash: cfg.semantic_hash(),
        seed: cfg.seed,
        workers: cfg.workers,
        inputs,
        stages: timer.stages,
        partitions: matched.summaries,
    };
    let mut w = create(&out.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;

    Ok(PipelineOutput {
        kg: graph,
        report,
        manifest,
    })
}

/// Per-category fact counts, in category order.
pub fn category_counts<S: Scalar>(graph: &kg::OpenKg<S>) -> BTreeMap<&'static str, usize> {
    kg::Category::ALL
        .iter()
        .map(|c| (c.as_str(), graph.category_count(*c)))
        .collect()
}
