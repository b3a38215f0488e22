//! Operator surface: each subcommand is a thin composition of the
//! pipeline modules. Every run that writes outputs also writes a JSON run
//! manifest (inputs, config, seed, provider ids, timings) so sweeps are
//! reproducible from a single command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 provider failure, 3 data error.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::consolidate::{consolidate, ConsolidationConfig};
use crate::error::{Error, Result, StoreError};
use crate::infotheory::estimate_entropy;
use crate::memory_build::{build_raw_memory, distill_lessons, extract_concepts, filter_records};
use crate::metrics::{
    delta_avg_m, diversity, lambda_sweep, pearson, quality, relevance, LambdaSweep, QualitySample,
    ScoreReport, ScoreRow,
};
use crate::model::{Memory, MemoryEntry, TaskKind};
use crate::providers::{
    embed_one, fnv1a, ChatModel, Embedder, HttpChat, HttpEmbedder, HttpProviderConfig, Providers,
    StubChat, StubEmbedder, ENV_API_KEY, ENV_CHAT_URL, ENV_EMBED_URL,
};
use crate::retrieve::{build_context, top_k, ContextTemplate};
use crate::store::{self, ContextRow, EntropyRow};
use crate::tree::{build_tree, tree_retrieve, TreeConfig};
use crate::vector::Vector;

#[derive(Parser, Debug)]
#[command(
    name = "decoct",
    version,
    about = "Experience-memory engine: distill, consolidate, index, retrieve, analyze"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter records and build the raw memory (one successful trajectory
    /// per problem).
    Ingest(IngestArgs),
    /// Filter records and distill each into a reusable lesson memory.
    Distill(DistillArgs),
    /// Compress a lesson memory to Ñ representative entries via k-means.
    Consolidate(ConsolidateArgs),
    /// Extract concept descriptions (when missing) and build the concept
    /// tree index.
    Index(IndexArgs),
    /// Retrieve contexts for a query file, flat top-K or via the tree.
    Retrieve(RetrieveArgs),
    /// Score retrieved contexts: relevance, diversity, Q(λ), and their
    /// correlation with measured improvement.
    Score(ScoreArgs),
    /// Monte-Carlo conditional-entropy and information-gain analysis.
    AnalyzeEntropy(AnalyzeEntropyArgs),
    /// Print a JSON summary of a records, memory, or tree file.
    Stats(StatsArgs),
}

#[derive(Args, Debug, Serialize)]
struct ProviderArgs {
    /// Provider backend: `stub` (deterministic, offline) or `http`.
    #[arg(long, default_value = "stub")]
    provider: String,
    /// Embedding dimension for the stub embedder.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Seed for stub providers, clustering, and sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model id sent to the HTTP embedding endpoint.
    #[arg(long, default_value = "default-embedding")]
    embed_model: String,
    /// Model id sent to the HTTP chat endpoint.
    #[arg(long, default_value = "default-chat")]
    chat_model: String,
    /// Cap on concurrently in-flight provider calls.
    #[arg(long, default_value_t = 8)]
    max_in_flight: usize,
}

struct BuiltProviders {
    embedder: Box<dyn Embedder>,
    chat: Box<dyn ChatModel>,
    max_in_flight: usize,
}

impl BuiltProviders {
    fn as_providers(&self) -> Providers<'_> {
        Providers {
            embedder: self.embedder.as_ref(),
            chat: self.chat.as_ref(),
            max_in_flight: self.max_in_flight,
        }
    }
}

fn build_providers(args: &ProviderArgs) -> Result<BuiltProviders> {
    match args.provider.as_str() {
        "stub" => Ok(BuiltProviders {
            embedder: Box::new(StubEmbedder::new(args.dim, args.seed)),
            chat: Box::new(StubChat::new(args.seed)),
            max_in_flight: args.max_in_flight,
        }),
        "http" => {
            let embed_url = std::env::var(ENV_EMBED_URL).map_err(|_| {
                Error::InvalidArgument(format!("--provider http requires {ENV_EMBED_URL}"))
            })?;
            let chat_url = std::env::var(ENV_CHAT_URL).map_err(|_| {
                Error::InvalidArgument(format!("--provider http requires {ENV_CHAT_URL}"))
            })?;
            let api_key = std::env::var(ENV_API_KEY).ok();
            let mut embed_config = HttpProviderConfig::new(embed_url, args.embed_model.clone());
            embed_config.api_key = api_key.clone();
            let mut chat_config = HttpProviderConfig::new(chat_url, args.chat_model.clone());
            chat_config.api_key = api_key;
            Ok(BuiltProviders {
                embedder: Box::new(HttpEmbedder {
                    config: embed_config,
                }),
                chat: Box::new(HttpChat {
                    config: chat_config,
                }),
                max_in_flight: args.max_in_flight,
            })
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown provider {other:?} (expected stub or http)"
        ))),
    }
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    /// Experience records file (JSONL).
    #[arg(long)]
    records: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug, Serialize)]
struct DistillArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug, Serialize)]
struct ConsolidateArgs {
    /// Lesson memory file.
    #[arg(long)]
    memory: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Consolidated size Ñ.
    #[arg(long, conflicts_with = "sweep")]
    target_size: Option<usize>,
    /// Comma-separated size list; one memory per size.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    /// Lesson-embedding weight in the blend.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Query file for the per-size retrieval-relevance report.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Retrieval depth for the relevance report.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug, Serialize)]
struct IndexArgs {
    #[arg(long)]
    memory: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Task family; picks the concept prompt and the default leaf size.
    #[arg(long, default_value = "reasoning")]
    task: String,
    /// Tree depth L.
    #[arg(long, default_value_t = 2)]
    depth: u32,
    /// Target leaf size s (task default when omitted).
    #[arg(long)]
    leaf_size: Option<usize>,
    /// Leaves pooled per query.
    #[arg(long, default_value_t = 5)]
    n_leaves: usize,
    /// Candidate pool cap.
    #[arg(long, default_value_t = 300)]
    candidate_cap: usize,
    /// Re-rank selection cap.
    #[arg(long, default_value_t = 8)]
    max_k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug, Serialize)]
struct RetrieveArgs {
    /// `flat` or `tree`.
    #[arg(long)]
    mode: String,
    #[arg(long)]
    memory: PathBuf,
    /// Tree file; required in tree mode.
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Entries per context in flat mode.
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long)]
    query_file: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Task family for the inference instruction.
    #[arg(long, default_value = "reasoning")]
    task: String,
    #[command(flatten)]
    #[serde(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug, Serialize)]
struct ScoreArgs {
    #[arg(long)]
    memory: PathBuf,
    /// Contexts file from `retrieve`.
    #[arg(long)]
    contexts: PathBuf,
    /// Eval samples file (rewards per query under both conditions).
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    lambda: f64,
    /// Sweep spec start:end:step, e.g. 0.0:1.0:0.1.
    #[arg(long)]
    lambda_sweep: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug, Serialize)]
struct AnalyzeEntropyArgs {
    #[arg(long)]
    memory: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Samples per (query, condition) estimate.
    #[arg(long, default_value_t = 8)]
    samples: usize,
    /// Comma-separated subset of base,relevant,random.
    #[arg(long, default_value = "base,relevant,random", value_delimiter = ',')]
    conditions: Vec<String>,
    /// Entries per context in the relevant/random conditions.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value = "reasoning")]
    task: String,
    #[command(flatten)]
    #[serde(flatten)]
    provider: ProviderArgs,
}

#[derive(Args, Debug, Serialize)]
struct StatsArgs {
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long)]
    tree: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Serialize)]
struct Timings {
    started_unix_ms: u128,
    elapsed_ms: u128,
}

#[derive(Serialize)]
struct ProviderIds {
    embedder: String,
    chat: String,
}

#[derive(Serialize)]
struct RunManifest {
    format_version: u32,
    command: String,
    argv: Vec<String>,
    provider_ids: ProviderIds,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    timings: Timings,
}

fn write_io(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| {
        Error::Store(StoreError::Io {
            path: path.display().to_string(),
            source: e,
        })
    })
}

fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write_io(path, &bytes)
}

/// Collects a run's inputs and outputs, then writes `manifest.json`.
struct RunContext {
    command: &'static str,
    out_dir: PathBuf,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started: Instant,
    started_unix_ms: u128,
}

impl RunContext {
    fn new(command: &'static str, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| {
            Error::Store(StoreError::Io {
                path: out_dir.display().to_string(),
                source: e,
            })
        })?;
        Ok(RunContext {
            command,
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis()),
        })
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let path = self.out_dir.join(name);
        self.outputs.push(path.display().to_string());
        path
    }

    fn finish<C: Serialize>(self, config: &C, providers: &BuiltProviders) -> Result<()> {
        let manifest = RunManifest {
            format_version: store::FORMAT_VERSION,
            command: self.command.to_string(),
            argv: std::env::args().skip(1).collect(),
            provider_ids: ProviderIds {
                embedder: providers.embedder.provider_id(),
                chat: providers.chat.provider_id(),
            },
            config: serde_json::to_value(config).expect("serializable config"),
            inputs: self.inputs,
            outputs: self.outputs,
            timings: Timings {
                started_unix_ms: self.started_unix_ms,
                elapsed_ms: self.started.elapsed().as_millis(),
            },
        };
        write_pretty_json(&self.out_dir.join("manifest.json"), &manifest)
    }
}

/// Deterministic memory id derived from the input bytes and the seed, so
/// reruns of the same invocation produce identical files.
fn content_id(prefix: &str, path: &Path, seed: u64) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::Store(StoreError::Io {
            path: path.display().to_string(),
            source: e,
        })
    })?;
    let h = fnv1a(&bytes) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    Ok(format!("{prefix}-{h:016x}"))
}

fn parse_task(s: &str) -> Result<TaskKind> {
    s.parse()
}

/// Parses `start:end:step` into an inclusive λ grid, snapping accumulated
/// float error to 9 decimal places.
fn parse_lambda_grid(spec: &str) -> Result<Vec<f64>> {
    let err = || Error::InvalidArgument(format!("bad sweep spec {spec:?} (want start:end:step)"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(err());
    }
    let start: f64 = parts[0].parse().map_err(|_| err())?;
    let end: f64 = parts[1].parse().map_err(|_| err())?;
    let step: f64 = parts[2].parse().map_err(|_| err())?;
    if !(step > 0.0) || end < start || !start.is_finite() || !end.is_finite() {
        return Err(err());
    }
    let mut grid = Vec::new();
    let mut i = 0u32;
    loop {
        let value = start + f64::from(i) * step;
        if value > end + step * 1e-9 {
            break;
        }
        grid.push((value * 1e9).round() / 1e9);
        i += 1;
    }
    Ok(grid)
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Distill(args) => cmd_distill(args),
        Command::Consolidate(args) => cmd_consolidate(args),
        Command::Index(args) => cmd_index(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Score(args) => cmd_score(args),
        Command::AnalyzeEntropy(args) => cmd_analyze_entropy(args),
        Command::Stats(args) => cmd_stats(args),
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let providers = build_providers(&args.provider)?;
    let mut run = RunContext::new("ingest", &args.out)?;
    run.input(&args.records);
    let records = store::load_records(&args.records)?;
    let kept = filter_records(&records);
    let id = content_id("raw", &args.records, args.provider.seed)?;
    let mut memory = build_raw_memory(&kept, providers.embedder.as_ref(), &id)?;
    memory.push_provenance(&format!(
        "filter_records: kept {} of {}",
        kept.len(),
        records.len()
    ));
    let out_path = run.output("memory.raw.jsonl");
    store::save_memory(&memory, &out_path)?;
    println!(
        "ingest: {} records, {} kept -> {}",
        records.len(),
        kept.len(),
        out_path.display()
    );
    run.finish(&args, &providers)
}

fn cmd_distill(args: DistillArgs) -> Result<()> {
    let providers = build_providers(&args.provider)?;
    let mut run = RunContext::new("distill", &args.out)?;
    run.input(&args.records);
    let records = store::load_records(&args.records)?;
    let kept = filter_records(&records);
    let output = distill_lessons(&kept, &providers.as_providers())?;
    let mut memory = output.memory;
    memory.id = content_id("lesson", &args.records, args.provider.seed)?;
    let out_path = run.output("memory.lesson.jsonl");
    store::save_memory(&memory, &out_path)?;
    let skip_path = run.output("skips.json");
    write_pretty_json(&skip_path, &output.skipped)?;
    println!(
        "distill: {} records, {} lessons, {} skipped -> {}",
        kept.len(),
        memory.len(),
        output.skipped.len(),
        out_path.display()
    );
    run.finish(&args, &providers)
}

/// Mean top-K retrieval relevance over a query set.
fn mean_retrieval_relevance(memory: &Memory, query_embeddings: &[Vector], k: usize) -> Result<f64> {
    let mut total = 0.0;
    for q in query_embeddings {
        let hits = top_k(q, memory, k)?;
        if hits.is_empty() {
            continue;
        }
        let embs: Vec<Vector> = hits.iter().map(|e| e.problem_embedding.clone()).collect();
        total += relevance(q, &embs)?;
    }
    Ok(total / query_embeddings.len() as f64)
}

#[derive(Serialize)]
struct RelevancePoint {
    target_size: usize,
    mean_relevance: f64,
    memory_file: String,
}

#[derive(Serialize)]
struct RelevanceReport {
    k: usize,
    alpha: f64,
    points: Vec<RelevancePoint>,
}

fn cmd_consolidate(args: ConsolidateArgs) -> Result<()> {
    let providers = build_providers(&args.provider)?;
    let mut run = RunContext::new("consolidate", &args.out)?;
    run.input(&args.memory);
    let memory = store::load_memory(&args.memory)?;
    let sizes: Vec<usize> = match (&args.target_size, &args.sweep) {
        (Some(n), None) => vec![*n],
        (None, Some(list)) if !list.is_empty() => list.clone(),
        _ => {
            return Err(Error::InvalidArgument(
                "exactly one of --target-size or --sweep is required".into(),
            ))
        }
    };
    let query_embeddings = match &args.queries {
        Some(path) => {
            run.input(path);
            let queries = store::load_queries(path)?;
            let texts: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();
            Some(providers.embedder.embed_batch(&texts)?)
        }
        None => None,
    };
    let mut points = Vec::new();
    for &size in &sizes {
        let config = ConsolidationConfig {
            target_size: size,
            alpha: args.alpha,
            seed: args.provider.seed,
            ..ConsolidationConfig::new(size)
        };
        let consolidated = consolidate(&memory, &config)?;
        let name = if sizes.len() == 1 {
            "memory.consolidated.jsonl".to_string()
        } else {
            format!("memory.consolidated.{size}.jsonl")
        };
        let path = run.output(&name);
        store::save_memory(&consolidated, &path)?;
        if let Some(qs) = &query_embeddings {
            points.push(RelevancePoint {
                target_size: size,
                mean_relevance: mean_retrieval_relevance(&consolidated, qs, args.k)?,
                memory_file: name.clone(),
            });
        }
        println!(
            "consolidate: {} -> {} entries -> {}",
            memory.len(),
            size,
            path.display()
        );
    }
    if query_embeddings.is_some() {
        let report = RelevanceReport {
            k: args.k,
            alpha: args.alpha,
            points,
        };
        write_pretty_json(&run.output("relevance_report.json"), &report)?;
        let mut csv = String::from("target_size,mean_relevance,memory_file\n");
        for p in &report.points {
            csv.push_str(&format!(
                "{},{},{}\n",
                p.target_size, p.mean_relevance, p.memory_file
            ));
        }
        let csv_path = run.output("relevance_report.csv");
        write_io(&csv_path, csv.as_bytes())?;
    }
    run.finish(&args, &providers)
}

fn cmd_index(args: IndexArgs) -> Result<()> {
    let task = parse_task(&args.task)?;
    let providers = build_providers(&args.provider)?;
    let mut run = RunContext::new("index", &args.out)?;
    run.input(&args.memory);
    let memory = store::load_memory(&args.memory)?;
    let needs_concepts = memory.entries.iter().any(|e| e.concept_embedding.is_none());
    let memory = if needs_concepts {
        let enriched = extract_concepts(&memory, task, &providers.as_providers())?;
        let path = run.output("memory.concepts.jsonl");
        store::save_memory(&enriched, &path)?;
        enriched
    } else {
        memory
    };
    let config = TreeConfig {
        depth: args.depth,
        target_leaf_size: args
            .leaf_size
            .unwrap_or_else(|| TreeConfig::for_task(task).target_leaf_size),
        n_leaves: args.n_leaves,
        candidate_cap: args.candidate_cap,
        max_selected: args.max_k,
        seed: args.provider.seed,
    };
    let tree = build_tree(&memory, &config)?;
    let path = run.output("tree.json");
    store::save_tree(&tree, &path)?;
    println!(
        "index: {} entries, b={}, {} leaves, depth {} -> {}",
        memory.len(),
        tree.branching,
        tree.leaf_count(),
        tree.depth(),
        path.display()
    );
    run.finish(&args, &providers)
}

fn cmd_retrieve(args: RetrieveArgs) -> Result<()> {
    let task = parse_task(&args.task)?;
    let providers = build_providers(&args.provider)?;
    let mut run = RunContext::new("retrieve", &args.out)?;
    run.input(&args.memory);
    run.input(&args.query_file);
    let memory = store::load_memory(&args.memory)?;
    let queries = store::load_queries(&args.query_file)?;
    let template = ContextTemplate::for_task(task);
    let mut rows = Vec::with_capacity(queries.len());
    match args.mode.as_str() {
        "flat" => {
            let embeddings = if memory.is_empty() || queries.is_empty() {
                None
            } else {
                let texts: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();
                Some(providers.embedder.embed_batch(&texts)?)
            };
            for (i, query) in queries.iter().enumerate() {
                let hits = match &embeddings {
                    Some(embs) => top_k(&embs[i], &memory, args.k)?,
                    None => Vec::new(),
                };
                let context = build_context(&query.text, &hits, &template);
                rows.push(ContextRow {
                    query_id: query.id.clone(),
                    query: context.query,
                    entry_ids: context.entry_ids,
                    prompt_text: context.prompt_text,
                    selected_leaf_ids: None,
                    rerank_fallback: None,
                });
            }
        }
        "tree" => {
            let tree_path = args
                .tree
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("--mode tree requires --tree".into()))?;
            run.input(tree_path);
            let tree = store::load_tree(tree_path)?;
            for query in &queries {
                let got = tree_retrieve(
                    &query.text,
                    &tree,
                    &memory,
                    &tree.config,
                    &providers.as_providers(),
                    &template,
                )?;
                rows.push(ContextRow {
                    query_id: query.id.clone(),
                    query: got.context.query,
                    entry_ids: got.context.entry_ids,
                    prompt_text: got.context.prompt_text,
                    selected_leaf_ids: Some(got.selected_leaf_ids),
                    rerank_fallback: Some(got.rerank_fallback),
                });
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected flat or tree)"
            )))
        }
    }
    let path = run.output("contexts.jsonl");
    store::save_contexts(&rows, &path)?;
    println!(
        "retrieve: {} queries ({} mode) -> {}",
        rows.len(),
        args.mode,
        path.display()
    );
    run.finish(&args, &providers)
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let providers = build_providers(&args.provider)?;
    let mut run = RunContext::new("score", &args.out)?;
    run.input(&args.memory);
    run.input(&args.contexts);
    run.input(&args.eval);
    let memory = store::load_memory(&args.memory)?;
    let contexts = store::load_contexts(&args.contexts)?;
    let evals = store::load_eval_samples(&args.eval)?;

    let mut samples = Vec::new();
    let mut rows = Vec::new();
    for context in &contexts {
        let eval = evals
            .iter()
            .find(|e| e.query_id == context.query_id)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}: no eval sample for query {}",
                    args.eval.display(),
                    context.query_id
                ))
            })?;
        if context.entry_ids.is_empty() {
            continue;
        }
        let query_embedding = embed_one(providers.embedder.as_ref(), &context.query)?;
        let mut retrieved = Vec::with_capacity(context.entry_ids.len());
        for id in &context.entry_ids {
            let entry = memory.entry_by_id(id).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}: entry {id} not in memory {}",
                    args.contexts.display(),
                    memory.id
                ))
            })?;
            retrieved.push(entry.problem_embedding.clone());
        }
        let delta = delta_avg_m(eval)?;
        rows.push(ScoreRow {
            query_id: context.query_id.clone(),
            relevance: relevance(&query_embedding, &retrieved)?,
            diversity: diversity(&retrieved)?,
            quality: quality(&query_embedding, &retrieved, args.lambda)?,
            delta_avg_m: delta,
        });
        samples.push(QualitySample {
            query_embedding,
            retrieved,
            delta_avg_m: delta,
        });
    }
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(
            "score needs at least two queries with nonempty contexts".into(),
        ));
    }
    let qs: Vec<f64> = rows.iter().map(|r| r.quality).collect();
    let deltas: Vec<f64> = rows.iter().map(|r| r.delta_avg_m).collect();
    let pearson_r = pearson(&qs, &deltas)?;
    let sweep: Option<LambdaSweep> = match &args.lambda_sweep {
        Some(spec) => Some(lambda_sweep(&samples, &parse_lambda_grid(spec)?)?),
        None => None,
    };
    let report = ScoreReport {
        lambda: args.lambda,
        rows,
        pearson_r,
        sweep,
    };
    write_pretty_json(&run.output("score.json"), &report)?;
    let csv_path = run.output("score.csv");
    write_io(&csv_path, report.to_csv().as_bytes())?;
    match &report.sweep {
        Some(sweep) => println!(
            "score: r = {} at lambda = {}; sweep argmax lambda = {} (r = {})",
            report.pearson_r, report.lambda, sweep.best.lambda, sweep.best.r
        ),
        None => println!(
            "score: r = {} at lambda = {}",
            report.pearson_r, report.lambda
        ),
    }
    run.finish(&args, &providers)
}

fn cmd_analyze_entropy(args: AnalyzeEntropyArgs) -> Result<()> {
    let task = parse_task(&args.task)?;
    for c in &args.conditions {
        if !matches!(c.as_str(), "base" | "relevant" | "random") {
            return Err(Error::InvalidArgument(format!(
                "unknown condition {c:?} (expected base, relevant, random)"
            )));
        }
    }
    let providers = build_providers(&args.provider)?;
    let mut run = RunContext::new("analyze-entropy", &args.out)?;
    run.input(&args.memory);
    run.input(&args.queries);
    let memory = store::load_memory(&args.memory)?;
    let queries = store::load_queries(&args.queries)?;
    let template = ContextTemplate::for_task(task);
    let mut rows: Vec<EntropyRow> = Vec::new();
    for query in &queries {
        let mut base_value: Option<f64> = None;
        for condition in &args.conditions {
            let context = match condition.as_str() {
                "base" => None,
                "relevant" => {
                    let qe = embed_one(providers.embedder.as_ref(), &query.text)?;
                    let hits = top_k(&qe, &memory, args.k)?;
                    Some(build_context(&query.text, &hits, &template))
                }
                "random" => {
                    // seeded draw, stable per query id
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        args.provider.seed ^ fnv1a(query.id.as_bytes()),
                    );
                    let mut available: Vec<usize> = (0..memory.len()).collect();
                    let mut picks: Vec<&MemoryEntry> = Vec::new();
                    while picks.len() < args.k && !available.is_empty() {
                        let i = rng.random_range(0..available.len());
                        picks.push(&memory.entries[available.swap_remove(i)]);
                    }
                    Some(build_context(&query.text, &picks, &template))
                }
                _ => unreachable!("validated above"),
            };
            let estimate = estimate_entropy(
                &query.text,
                context.as_ref(),
                args.samples,
                providers.chat.as_ref(),
            )?;
            let gain = if condition == "base" {
                base_value = Some(estimate.value);
                None
            } else {
                base_value.map(|base| base - estimate.value)
            };
            rows.push(EntropyRow {
                query_id: query.id.clone(),
                condition: condition.clone(),
                value_nats: estimate.value,
                mean_length: estimate.mean_length,
                num_samples: estimate.num_samples,
                information_gain_nats: gain,
            });
        }
    }
    let path = run.output("entropy.jsonl");
    store::save_entropy_rows(&rows, &path)?;
    println!(
        "analyze-entropy: {} queries x {} conditions -> {}",
        queries.len(),
        args.conditions.len(),
        path.display()
    );
    run.finish(&args, &providers)
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let mut out = serde_json::Map::new();
    if let Some(path) = &args.records {
        let records = store::load_records(path)?;
        let outcomes: usize = records.iter().map(|r| r.outcomes.len()).sum();
        let positives = filter_records(&records).len();
        out.insert(
            "records".into(),
            serde_json::json!({
                "path": path.display().to_string(),
                "count": records.len(),
                "outcomes": outcomes,
                "with_positive_reward": positives,
            }),
        );
    }
    if let Some(path) = &args.memory {
        let memory = store::load_memory(path)?;
        let with_concepts = memory
            .entries
            .iter()
            .filter(|e| e.concept_embedding.is_some())
            .count();
        let with_payload_emb = memory
            .entries
            .iter()
            .filter(|e| e.payload_embedding.is_some())
            .count();
        out.insert(
            "memory".into(),
            serde_json::json!({
                "path": path.display().to_string(),
                "id": memory.id,
                "kind": memory.kind.as_str(),
                "entries": memory.len(),
                "dim": memory.dim(),
                "with_payload_embedding": with_payload_emb,
                "with_concept_embedding": with_concepts,
                "provenance_lines": memory.provenance.lines().count(),
            }),
        );
    }
    if let Some(path) = &args.tree {
        let tree = store::load_tree(path)?;
        let leaves = tree.leaves();
        let members: usize = leaves.iter().map(|l| l.members.len()).sum();
        out.insert(
            "tree".into(),
            serde_json::json!({
                "path": path.display().to_string(),
                "source_memory_id": tree.source_memory_id,
                "branching": tree.branching,
                "depth": tree.depth(),
                "leaves": leaves.len(),
                "entries": members,
            }),
        );
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(
            "stats needs at least one of --records, --memory, --tree".into(),
        ));
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::Value::Object(out)).expect("serializable")
    );
    Ok(())
}
