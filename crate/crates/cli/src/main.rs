use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use openkg::corpus::HeadReduction;
use openkg::evalkit::{sample_for_review, score_slot_filling, write_review_sheet, OracleKg};
use openkg::filters::{apply_filters, collect_stats, fact_phrase, PhraseCounts, RelationStats};
use openkg::kg::{self, ExportFormat};
use openkg::pipeline::{self, PipelineConfig};
use openkg::relmap::{self, CountMode, RelationMap};
use openkg::{CandidateFact, LinkedFact, Linker, OpenKg, Real};

#[derive(Parser)]
#[command(
    name = "openkg",
    version,
    about = "Open KG construction from attention matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Beam-search candidate facts for every partition file
    Match(MatchArgs),
    /// Distinct head/tail pair counts per normalized relation phrase
    Stats(StatsArgs),
    /// Split candidates into kept and rejected facts
    Filter(FilterArgs),
    /// Link heads and tails of kept facts to KG entities
    Link(LinkArgs),
    /// Count phrase/relation co-occurrences against an oracle KG
    BuildRelmap(BuildRelmapArgs),
    /// Write the curation sheet of top phrases per KG relation
    Rank(RankArgs),
    /// Set mapped KG relations on linked facts
    Map(MapArgs),
    /// Deduplicate mapped facts into an open KG
    Assemble(AssembleArgs),
    /// Convert an open KG to jsonl, tsv or dot
    Export(ExportArgs),
    /// Slot-filling precision, recall and F1 of mapped facts
    Score(ScoreArgs),
    /// Seeded sample of unmapped facts for manual review
    SampleReview(SampleReviewArgs),
    /// Run the whole pipeline
    Run(RunArgs),
}

#[derive(Args)]
struct Overrides {
    /// TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    max_relation_len: Option<usize>,
    #[arg(long)]
    degree_threshold: Option<Real>,
    #[arg(long)]
    min_distinct_pairs: Option<usize>,
    #[arg(long)]
    link_threshold: Option<Real>,
    #[arg(long)]
    head_reduction: Option<HeadReduction>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strict_precision: bool,
    /// Keep non-contiguous relations
    #[arg(long)]
    allow_gaps: bool,
    /// Accumulate raw degree instead of dividing by relation length
    #[arg(long)]
    raw_degree: bool,
}

impl Overrides {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.beam_size {
            cfg.matching.beam_size = v;
        }
        if let Some(v) = self.max_relation_len {
            cfg.matching.max_relation_len = v;
        }
        if let Some(v) = self.degree_threshold {
            cfg.filter.degree_threshold = v;
        }
        if let Some(v) = self.min_distinct_pairs {
            cfg.filter.min_distinct_pairs = v;
        }
        if let Some(v) = self.link_threshold {
            cfg.link_threshold = v;
        }
        if let Some(v) = self.head_reduction {
            cfg.head_reduction = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.strict_precision |= self.strict_precision;
        if self.allow_gaps {
            cfg.filter.require_contiguous = false;
        }
        if self.raw_degree {
            cfg.matching.normalize_by_length = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct MatchArgs {
    /// Partition files or directories of `*.senrec.jsonl`
    #[arg(long, num_args = 1.., required = true)]
    records: Vec<PathBuf>,
    /// Output directory; candidates go to `<out>/candidates`
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, num_args = 1.., required = true)]
    candidates: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long, num_args = 1.., required = true)]
    candidates: Vec<PathBuf>,
    /// Stats TSV written by `stats`
    #[arg(long)]
    stats: PathBuf,
    /// Directory for `<name>.kept.jsonl` and `<name>.rejected.jsonl`
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Args)]
struct LinkerFiles {
    #[arg(long)]
    dictionary: PathBuf,
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long, num_args = 1.., required = true)]
    records: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    kept: Vec<PathBuf>,
    #[command(flatten)]
    files: LinkerFiles,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Args)]
struct BuildRelmapArgs {
    #[arg(long, num_args = 1.., required = true)]
    linked: Vec<PathBuf>,
    #[arg(long)]
    oracle: PathBuf,
    #[arg(long, default_value = "per-fact", value_parser = parse_count_mode)]
    count_mode: CountMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    /// Counts TSV written by `build-relmap`
    #[arg(long)]
    counts: PathBuf,
    #[arg(long, default_value_t = relmap::DEFAULT_REVIEW_DEPTH)]
    depth: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long, num_args = 1.., required = true)]
    linked: Vec<PathBuf>,
    /// Counts TSV; without it every approved curation row is taken as is
    #[arg(long)]
    counts: Option<PathBuf>,
    #[arg(long)]
    curation: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AssembleArgs {
    #[arg(long, num_args = 1.., required = true)]
    mapped: Vec<PathBuf>,
    /// Output `.okg.jsonl` file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// KG in `.okg.jsonl` form
    #[arg(long)]
    kg: PathBuf,
    #[arg(long, default_value = "tsv")]
    format: ExportFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    kg: PathBuf,
    #[arg(long)]
    oracle: PathBuf,
    #[arg(long)]
    strict_precision: bool,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleReviewArgs {
    #[arg(long)]
    kg: PathBuf,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, num_args = 1..)]
    records: Vec<PathBuf>,
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    oracle: Option<PathBuf>,
    #[arg(long)]
    curation: Option<PathBuf>,
    #[arg(long)]
    relation_counts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    opts: Overrides,
}

fn parse_count_mode(s: &str) -> Result<CountMode, String> {
    match s {
        "per-fact" => Ok(CountMode::PerFact),
        "per-pair" => Ok(CountMode::PerPair),
        other => Err(format!("unknown count mode {other:?} (per-fact, per-pair)")),
    }
}

fn reader(path: &Path) -> Result<BufReader<fs::File>> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn writer(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let f = fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_all<T: serde::de::DeserializeOwned>(paths: &[PathBuf]) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(pipeline::read_jsonl::<T>(p)?);
    }
    Ok(out)
}

fn read_kg(path: &Path) -> Result<OpenKg> {
    kg::read_jsonl(reader(path)?).with_context(|| format!("cannot parse {}", path.display()))
}

fn read_oracle(path: &Path) -> Result<OracleKg> {
    OracleKg::read_tsv(reader(path)?).with_context(|| format!("cannot parse {}", path.display()))
}

fn stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}

fn cmd_match(args: MatchArgs) -> Result<()> {
    let cfg = PipelineConfig {
        records: args.records,
        out: args.out,
        ..args.opts.config()?
    };
    let out = pipeline::run_match(&cfg)?;
    let failures: usize = out.summaries.iter().map(|s| s.failures).sum();
    let candidates: usize = out.summaries.iter().map(|s| s.candidates).sum();
    println!(
        "{} partitions, {candidates} candidates, {failures} failed records",
        out.partitions.len()
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let mut stats = RelationStats::new();
    for path in &args.candidates {
        let facts: Vec<CandidateFact> = pipeline::read_jsonl(path)?;
        stats.merge(&collect_stats(&facts, fact_phrase));
    }
    stats.write_tsv(writer(&args.out)?)?;
    println!("{} phrases", stats.len());
    Ok(())
}

fn cmd_filter(args: FilterArgs) -> Result<()> {
    let cfg = args.opts.config()?;
    let counts = PhraseCounts::read_tsv(reader(&args.stats)?)
        .with_context(|| format!("cannot parse {}", args.stats.display()))?;
    fs::create_dir_all(&args.out)?;
    let (mut kept, mut rejected) = (0, 0);
    for path in &args.candidates {
        let facts: Vec<CandidateFact> = pipeline::read_jsonl(path)?;
        let outcome = apply_filters(facts, &counts, &cfg.filter);
        let name = stem(path);
        pipeline::write_jsonl(&args.out.join(format!("{name}.kept.jsonl")), &outcome.kept)?;
        pipeline::write_jsonl(
            &args.out.join(format!("{name}.rejected.jsonl")),
            &outcome.rejected,
        )?;
        kept += outcome.kept.len();
        rejected += outcome.rejected.len();
    }
    println!("{kept} kept, {rejected} rejected");
    Ok(())
}

fn cmd_link(args: LinkArgs) -> Result<()> {
    let mut cfg = args.opts.config()?;
    cfg.dictionary = Some(args.files.dictionary);
    cfg.vectors = Some(args.files.vectors);
    cfg.labels = Some(args.files.labels);
    let linker: Linker = pipeline::load_linker(&cfg)?;
    let records = pipeline::discover_partitions(&args.records)?;
    let facts: Vec<CandidateFact> = read_all(&args.kept)?;
    let linked = pipeline::link_facts(&records, facts, &linker, cfg.head_reduction)?;
    pipeline::write_jsonl(&args.out, &linked)?;
    let both = linked
        .iter()
        .filter(|f| f.head_link.is_some() && f.tail_link.is_some())
        .count();
    println!("{} facts, {both} with both ends linked", linked.len());
    Ok(())
}

fn cmd_build_relmap(args: BuildRelmapArgs) -> Result<()> {
    let oracle = read_oracle(&args.oracle)?;
    let facts: Vec<LinkedFact> = read_all(&args.linked)?;
    let map = pipeline::build_counts(&facts, &oracle, args.count_mode);
    map.write_counts(writer(&args.out)?)?;
    println!("{} phrase/relation pairs", map.counts().len());
    Ok(())
}

fn read_counts(path: &Path) -> Result<RelationMap> {
    RelationMap::read_counts(reader(path)?)
        .with_context(|| format!("cannot parse {}", path.display()))
}

fn cmd_rank(args: RankArgs) -> Result<()> {
    let map = read_counts(&args.counts)?;
    let rows = map.curation_sheet(args.depth);
    relmap::write_curation_sheet(&rows, writer(&args.out)?)?;
    println!(
        "{} rows for {} relations",
        rows.len(),
        map.kg_relations().len()
    );
    Ok(())
}

fn cmd_map(args: MapArgs) -> Result<()> {
    let rows = relmap::read_curation_sheet(reader(&args.curation)?)
        .with_context(|| format!("cannot parse {}", args.curation.display()))?;
    let map = match &args.counts {
        Some(path) => {
            let mut map = read_counts(path)?;
            let ignored = map.apply_curation(&rows);
            if ignored > 0 {
                log::warn!("{ignored} approved rows have no count and were ignored");
            }
            map
        }
        None => RelationMap::from_curation(&rows),
    };
    let mut facts: Vec<LinkedFact> = read_all(&args.linked)?;
    kg::map_facts(&mut facts, &map);
    pipeline::write_jsonl(&args.out, &facts)?;
    let mapped = facts.iter().filter(|f| f.relation_kg.is_some()).count();
    println!("{mapped} of {} facts mapped", facts.len());
    Ok(())
}

fn cmd_assemble(args: AssembleArgs) -> Result<()> {
    let facts: Vec<LinkedFact> = read_all(&args.mapped)?;
    let graph: OpenKg = kg::assemble(&facts);
    kg::export(&graph, ExportFormat::Jsonl, writer(&args.out)?)?;
    let counts = pipeline::category_counts(&graph);
    println!("{} facts {counts:?}", graph.len());
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let graph = read_kg(&args.kg)?;
    let bytes = kg::export(&graph, args.format, writer(&args.out)?)?;
    println!("{bytes} bytes");
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let graph = read_kg(&args.kg)?;
    let oracle = read_oracle(&args.oracle)?;
    let report = score_slot_filling(graph.facts(), &oracle, args.strict_precision);
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => {
            let mut w = writer(path)?;
            writeln!(w, "{json}")?;
            w.flush()?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_sample_review(args: SampleReviewArgs) -> Result<()> {
    let graph = read_kg(&args.kg)?;
    let unmapped: Vec<_> = graph
        .facts()
        .iter()
        .filter(|f| f.category != kg::Category::Mapped)
        .cloned()
        .collect();
    let picked = sample_for_review(&unmapped, args.n, args.seed);
    write_review_sheet(&picked, writer(&args.out)?)?;
    println!(
        "{} of {} unmapped facts sampled",
        picked.len(),
        unmapped.len()
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = args.opts.config()?;
    if !args.records.is_empty() {
        cfg.records = args.records;
    }
    for (slot, value) in [
        (&mut cfg.dictionary, args.dictionary),
        (&mut cfg.vectors, args.vectors),
        (&mut cfg.labels, args.labels),
        (&mut cfg.oracle, args.oracle),
        (&mut cfg.curation, args.curation),
        (&mut cfg.relation_counts, args.relation_counts),
    ] {
        if value.is_some() {
            *slot = value;
        }
    }
    if let Some(out) = args.out {
        cfg.out = out;
    }
    if cfg.records.is_empty() {
        bail!("no records given (--records or `records` in the config)");
    }
    let out = pipeline::run_pipeline(&cfg)?;
    println!(
        "{} facts {:?}; precision {:.4} recall {:.4} f1 {:.4}",
        out.kg.len(),
        pipeline::category_counts(&out.kg),
        out.report.precision,
        out.report.recall,
        out.report.f1
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAMA_KG_LOG", "warn")).init();
    match Cli::parse().command {
        Command::Match(a) => cmd_match(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Link(a) => cmd_link(a),
        Command::BuildRelmap(a) => cmd_build_relmap(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Map(a) => cmd_map(a),
        Command::Assemble(a) => cmd_assemble(a),
        Command::Export(a) => cmd_export(a),
        Command::Score(a) => cmd_score(a),
        Command::SampleReview(a) => cmd_sample_review(a),
        Command::Run(a) => cmd_run(a),
    }
}
