//! The `prefkit` command line.
//!
//! Every command reads JSON-lines files, runs one pipeline stage and writes its
//! outputs in prompt_id order. Exit codes: 0 success, 1 I/O failure, 2 parse
//! error, 3 referential or coverage error, 4 configuration error.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{self, FormatError, ModelDocument, ScoreLine};
use crate::graph::{self, Averaging, ConflictTally, GraphError, PartialRanking};
use crate::metrics::{self, MetricsError, ScoreTable};
use crate::records::{AnnotationRecord, ResponseIndex, ResponseIndexError, ResponseRecord, Source, Verdict};
use crate::supervision::{
    self, AnnotationTask, FilterOptions, PreferencePair, QualityConfig, QualityFlag, SupervisionError,
    DEFAULT_BUCKET_EDGES,
};
use crate::synth::{self, CorpusSpec, TruthLine};
use crate::trainer::{self, FeatureRecord, FeatureTable, TrainError, TrainingConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Referential(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Referential(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io { .. } => CliError::Io(e.to_string()),
            FormatError::Parse { .. } => CliError::Parse(e.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Referential(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::EmptyInput => CliError::Config(e.to_string()),
            _ => CliError::Referential(e.to_string()),
        }
    }
}

impl From<ResponseIndexError> for CliError {
    fn from(e: ResponseIndexError) -> Self {
        CliError::Referential(e.to_string())
    }
}

impl From<SupervisionError> for CliError {
    fn from(e: SupervisionError) -> Self {
        match e {
            SupervisionError::InvalidConfig(_) => CliError::Config(e.to_string()),
            SupervisionError::Score(inner) => inner.into(),
            SupervisionError::Graph(inner) => inner.into(),
            _ => CliError::Referential(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::CapacityTooSmall(_) => CliError::Config(e.to_string()),
            _ => CliError::Referential(e.to_string()),
        }
    }
}

/// Settings shared by all commands, loaded from `--config`. Every field is
/// optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub margin: f64,
    pub quality: QualityConfig,
    pub bucket_edges: Vec<i64>,
    pub training: TrainingConfig<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            margin: 0.0,
            quality: QualityConfig::default(),
            bucket_edges: DEFAULT_BUCKET_EDGES.to_vec(),
            training: TrainingConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(CliError::Config(format!("margin must be non-negative, got {}", self.margin)));
        }
        self.quality.validate()?;
        supervision::length_buckets(&self.bucket_edges)?;
        self.training.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let config: Self = format::read_document(path).map_err(|e| match e {
            FormatError::Parse { .. } => CliError::Config(e.to_string()),
            other => other.into(),
        })?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Parser)]
#[command(name = "prefkit", version, about = "Preference-data toolkit and reward-model evaluation harness")]
pub struct Cli {
    /// Seed for every stochastic step; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge annotation conflicts and write partial rankings.
    Resolve(ResolveArgs),
    /// Score a reward function against gold rankings.
    Eval(EvalArgs),
    /// Emit pair or triple annotation tasks.
    Schedule(ScheduleArgs),
    /// Keep machine verdicts that agree with a trusted score table.
    Filter(FilterArgs),
    /// Balance chosen-longer and chosen-shorter pairs.
    Debias(DebiasArgs),
    /// Train a linear Bradley-Terry reward head.
    Train(TrainArgs),
    /// Report positional and length preferences of annotations.
    BiasReport(BiasReportArgs),
    /// Flag abnormally long or off-script responses.
    Quality(QualityArgs),
    /// Pick the top-scoring response of every prompt.
    BestOfN(BestOfNArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Answer annotation tasks with a simulated, position-biased annotator.
    SimulateAnnotator(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict endpoints to these responses.
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Conflict report path; defaults to `<out>.conflicts.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Dataset label in the report; defaults to the annotation file stem.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Also report the per-prompt (macro) average.
    #[arg(long = "macro")]
    pub macro_average: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub rankings: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleMode {
    Pair,
    Triple,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ScheduleMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    /// Source of response lengths for the output pairs.
    #[arg(long)]
    pub responses: PathBuf,
    /// Required score advantage of the winner; overrides the config file.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Keep ties whose score gap is within the margin and write them here.
    #[arg(long)]
    pub ties_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DebiasArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Gold rankings to train on.
    #[arg(long, conflicts_with = "pairs", required_unless_present = "pairs")]
    pub rankings: Option<PathBuf>,
    /// Preference pairs to train on; resolved into rankings per prompt.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub out_model: PathBuf,
    #[arg(long)]
    pub history: PathBuf,
}

#[derive(Debug, Args)]
pub struct BiasReportArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub responses: PathBuf,
    /// Comma-separated bucket edges in characters; overrides the config file.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub edges: Option<Vec<i64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BestOfNArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 24)]
    pub prompts: usize,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Conflict report written next to the rankings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub dataset: String,
    pub conflict_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub macro_conflict_ratio: Option<f64>,
    pub n_prompts: usize,
    pub n_records: usize,
    pub n_inconsistent: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub kept: usize,
    pub dropped: usize,
    pub retained_ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityLine {
    pub prompt_id: String,
    pub response_id: String,
    pub flags: Vec<QualityFlag>,
}

struct Context {
    config: PipelineConfig,
    seed: u64,
    seed_overridden: bool,
}

fn load_responses(path: &Path) -> Result<(Vec<ResponseRecord>, ResponseIndex), CliError> {
    let records: Vec<ResponseRecord> = format::read_lines(path)?;
    let index = ResponseIndex::new(&records)?;
    Ok((records, index))
}

fn load_scores(path: &Path) -> Result<ScoreTable<f64>, CliError> {
    Ok(format::read_scores(path)??)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

/// Runs one parsed invocation. Human-readable summaries go to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let ctx = Context {
        seed: cli.seed.unwrap_or(config.seed),
        seed_overridden: cli.seed.is_some(),
        config,
    };
    match cli.command {
        Command::Resolve(a) => cmd_resolve(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Schedule(a) => cmd_schedule(&ctx, &a),
        Command::Filter(a) => cmd_filter(&ctx, &a),
        Command::Debias(a) => cmd_debias(&ctx, &a),
        Command::Train(a) => cmd_train(&ctx, &a),
        Command::BiasReport(a) => cmd_bias_report(&ctx, &a),
        Command::Quality(a) => cmd_quality(&ctx, &a),
        Command::BestOfN(a) => cmd_best_of_n(&a),
        Command::Synth(a) => cmd_synth(&ctx, &a),
        Command::SimulateAnnotator(a) => cmd_simulate(&ctx, &a),
    }
}

fn cmd_resolve(args: &ResolveArgs) -> Result<(), CliError> {
    let annotations: Vec<AnnotationRecord> = format::read_lines(&args.annotations)?;
    let index = match &args.responses {
        Some(path) => Some(load_responses(path)?.1),
        None => None,
    };

    let mut rankings = Vec::new();
    let mut tallies = Vec::new();
    for (prompt_id, records) in graph::group_by_prompt(&annotations) {
        let known = index.as_ref().map(|i| i.response_ids(&prompt_id));
        let g = graph::build_graph(&records, known.as_ref())?;
        let ranking = graph::resolve(&g);
        tallies.push(graph::conflict_tally(&records, &ranking)?);
        rankings.push(ranking);
    }
    ensure_parent(&args.out)?;
    format::write_rankings(&args.out, &rankings)?;

    let pooled = tallies.iter().fold(ConflictTally::default(), |acc, t| ConflictTally {
        inconsistent: acc.inconsistent + t.inconsistent,
        total: acc.total + t.total,
    });
    let report = ConflictReport {
        dataset: args.dataset.clone().unwrap_or_else(|| {
            args.annotations
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        }),
        conflict_ratio: graph::pooled_conflict_ratio(&tallies, Averaging::Micro),
        macro_conflict_ratio: args
            .macro_average
            .then(|| graph::pooled_conflict_ratio(&tallies, Averaging::Macro)),
        n_prompts: rankings.len(),
        n_records: pooled.total,
        n_inconsistent: pooled.inconsistent,
    };
    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".conflicts.json");
        PathBuf::from(p)
    });
    format::write_document(&report_path, &report)?;
    println!("{}", format::to_json_line(&report));
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let rankings = format::read_rankings(&args.rankings)?;
    let scores = load_scores(&args.scores)?;
    let (responses, _) = load_responses(&args.responses)?;
    let categories = metrics::categories_from_responses(&responses);
    let report = metrics::evaluate(&rankings, &scores, &categories)?;
    ensure_parent(&args.out)?;
    format::write_document(&args.out, &report)?;
    Ok(())
}

fn cmd_schedule(ctx: &Context, args: &ScheduleArgs) -> Result<(), CliError> {
    let (_, index) = load_responses(&args.responses)?;
    let mut tasks: Vec<AnnotationTask> = Vec::new();
    for (prompt_id, ids) in index.by_prompt() {
        tasks.extend(match args.mode {
            ScheduleMode::Pair => supervision::schedule_pairs(&prompt_id, &ids, ctx.seed)?,
            ScheduleMode::Triple => supervision::schedule_triples(&prompt_id, &ids, ctx.seed)?,
        });
    }
    ensure_parent(&args.out)?;
    format::write_lines(&args.out, &tasks)?;
    Ok(())
}

fn cmd_filter(ctx: &Context, args: &FilterArgs) -> Result<(), CliError> {
    let annotations: Vec<AnnotationRecord> = format::read_lines(&args.annotations)?;
    let scores = load_scores(&args.scores)?;
    let (_, index) = load_responses(&args.responses)?;
    let options = FilterOptions {
        margin: args.margin.unwrap_or(ctx.config.margin),
        retain_consistent_ties: args.ties_out.is_some(),
    };
    let mut outcome = supervision::filter_with_scores(&annotations, &scores, &index, &options)?;
    outcome.kept.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
    outcome.retained_ties.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));

    ensure_parent(&args.out)?;
    format::write_lines(&args.out, &outcome.kept)?;
    if let Some(path) = &args.ties_out {
        format::write_lines(path, &outcome.retained_ties)?;
    }
    let summary = FilterSummary {
        kept: outcome.kept.len(),
        dropped: outcome.dropped,
        retained_ties: outcome.retained_ties.len(),
    };
    println!("{}", format::to_json_line(&summary));
    Ok(())
}

fn cmd_debias(ctx: &Context, args: &DebiasArgs) -> Result<(), CliError> {
    let pairs: Vec<PreferencePair> = format::read_lines(&args.pairs)?;
    let balanced = supervision::length_debias(&pairs, ctx.seed);
    ensure_parent(&args.out)?;
    format::write_lines(&args.out, &balanced)?;
    Ok(())
}

/// Resolves preference pairs into one ranking per prompt.
pub fn rankings_from_pairs(pairs: &[PreferencePair]) -> Result<Vec<PartialRanking>, GraphError> {
    let records: Vec<AnnotationRecord> = pairs
        .iter()
        .map(|p| AnnotationRecord::new(p.prompt_id.clone(), p.chosen.clone(), p.rejected.clone(), Verdict::First, Source::Machine))
        .collect();
    graph::resolve_all(&records)
}

fn cmd_train(ctx: &Context, args: &TrainArgs) -> Result<(), CliError> {
    let features: Vec<FeatureRecord<f64>> = format::read_lines(&args.features)?;
    let features = FeatureTable::new(features)?;
    let rankings = match (&args.rankings, &args.pairs) {
        (Some(path), _) => format::read_rankings(path)?,
        (None, Some(path)) => rankings_from_pairs(&format::read_lines::<PreferencePair>(path)?)?,
        (None, None) => return Err(CliError::Config("either --rankings or --pairs is required".into())),
    };
    let mut config = ctx.config.training.clone();
    if ctx.seed_overridden {
        config.seed = ctx.seed;
    }
    let outcome = trainer::train(&features, &rankings, &config)?;
    ensure_parent(&args.out_model)?;
    ensure_parent(&args.history)?;
    format::write_document(&args.out_model, &ModelDocument::from(&outcome.model))?;
    format::write_lines(&args.history, &outcome.history)?;
    Ok(())
}

fn cmd_bias_report(ctx: &Context, args: &BiasReportArgs) -> Result<(), CliError> {
    let annotations: Vec<AnnotationRecord> = format::read_lines(&args.annotations)?;
    let (_, index) = load_responses(&args.responses)?;
    let edges = args.edges.clone().unwrap_or_else(|| ctx.config.bucket_edges.clone());
    let report = supervision::bias_report(&annotations, &index, &edges)?;
    ensure_parent(&args.out)?;
    format::write_document(&args.out, &report)?;
    Ok(())
}

fn cmd_quality(ctx: &Context, args: &QualityArgs) -> Result<(), CliError> {
    let (_, index) = load_responses(&args.responses)?;
    let lines: Vec<QualityLine> = index
        .records()
        .map(|r| QualityLine {
            prompt_id: r.prompt_id.clone(),
            response_id: r.response_id.clone(),
            flags: supervision::quality_flags(r, &ctx.config.quality).into_iter().collect(),
        })
        .collect();
    ensure_parent(&args.out)?;
    format::write_lines(&args.out, &lines)?;
    Ok(())
}

fn cmd_best_of_n(args: &BestOfNArgs) -> Result<(), CliError> {
    let scores = load_scores(&args.scores)?;
    let prompts: BTreeSet<&str> = scores.iter().map(|(p, _, _)| p).collect();
    let mut lines = Vec::new();
    for prompt_id in prompts {
        let best = metrics::best_of_n(prompt_id, &scores)?;
        let score = scores.require(prompt_id, &best)?;
        lines.push(ScoreLine {
            prompt_id: prompt_id.to_string(),
            response_id: best,
            score,
        });
    }
    ensure_parent(&args.out)?;
    format::write_lines(&args.out, &lines)?;
    Ok(())
}

fn cmd_synth(ctx: &Context, args: &SynthArgs) -> Result<(), CliError> {
    let corpus = synth::generate(&CorpusSpec {
        prompts: args.prompts,
        feature_dim: args.dim,
        seed: ctx.seed,
    })?;
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::Io(format!("{}: {e}", args.out_dir.display())))?;
    let dir = &args.out_dir;
    format::write_lines(&dir.join("responses.jsonl"), &corpus.responses)?;
    format::write_lines(&dir.join("human_annotations.jsonl"), &corpus.human_annotations)?;
    format::write_lines(&dir.join("scores.jsonl"), &corpus.scores)?;
    format::write_lines(&dir.join("features.jsonl"), &corpus.features)?;
    format::write_lines(&dir.join("truth.jsonl"), &corpus.truth)?;
    Ok(())
}

fn cmd_simulate(ctx: &Context, args: &SimulateArgs) -> Result<(), CliError> {
    let tasks: Vec<AnnotationTask> = format::read_lines(&args.tasks)?;
    let truth: Vec<TruthLine> = format::read_lines(&args.truth)?;
    let annotations = synth::simulate_annotator(&tasks, &truth, ctx.seed)?;
    ensure_parent(&args.out)?;
    format::write_lines(&args.out, &annotations)?;
    Ok(())
}
