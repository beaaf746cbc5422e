//! The `oats` command line. Every subcommand reads and writes artifacts
//! under `--data-dir` (default `$OATS_DATA_DIR`, else `.`) and prints a
//! JSON report on stdout.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use super::http::{http_serve, SelectResponse};
use super::{artifacts, load_embedder, Engine, Method, ServeConfig};
use crate::adapter::{AdapterTrainConfig, InfoNce};
use crate::embed::{embed_corpus, Embedder, EmbedderSpec};
use crate::error::{Error, Result};
use crate::eval::{bench_latency, evaluate_method, BenchOptions, MetricsReport, SplitSpec};
use crate::pipeline::{adapter_job, label_source, refine_job, rerank_job, Dataset};
use crate::refine::RefineConfig;
use crate::rerank::RerankTrainConfig;
use crate::store::{read_embedding_table, write_embedding_table, Corpus, EmbeddingTable};

#[derive(Debug, Parser)]
#[command(name = "oats", version, about = "Outcome-aware tool selection")]
pub struct Cli {
    /// Seed for every random choice (splits, initialization, shuffles).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Artifact root.
    #[arg(long, global = true, env = super::DATA_DIR_ENV, default_value = ".")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate tools.jsonl, queries.jsonl and outcomes.jsonl.
    Ingest,
    /// Embed tool descriptions into tools.emb.
    Embed(EmbedArgs),
    /// Refine tool embeddings from outcomes and gate the result.
    Refine(RefineArgs),
    /// Train the candidate re-ranker.
    TrainRerank(RerankArgs),
    /// Train the residual embedding adapter.
    TrainAdapter(AdapterArgs),
    /// Retrieval metrics on the held-out split.
    Eval(EvalArgs),
    /// Single-thread latency percentiles.
    Bench(BenchArgs),
    /// Run the HTTP select endpoint.
    Serve(ServeArgs),
    /// Select tools for one query.
    Select(SelectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    /// Share of the training queries held out for validation.
    #[arg(long, default_value_t = 0.15)]
    pub val_split: f64,
}

impl SplitArgs {
    fn spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            seed,
            train_frac: self.train_frac,
            rerank_val_frac: self.val_split,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    /// Write a synthetic embedder spec of this dimension first.
    #[arg(long)]
    pub synthetic_dim: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RefineArgs {
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 3)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5)]
    pub label_k: usize,
    #[arg(long, default_value_t = 5)]
    pub gate_k: usize,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Label retrievals from outcomes.jsonl instead of ground truth.
    #[arg(long)]
    pub log_replay: bool,
    /// With --log-replay, count retrieved pairs missing from the log as failures.
    #[arg(long)]
    pub unlogged_negative: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RerankArgs {
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub alpha_pool: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Build pools from tools.emb even when refined.emb exists.
    #[arg(long)]
    pub base: bool,
    #[arg(long)]
    pub log_replay: bool,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AdapterArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Dense candidates scanned for hard negatives.
    #[arg(long, default_value_t = 10)]
    pub pool_c: usize,
    #[arg(long, default_value_t = crate::adapter::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = 5)]
    pub gate_k: usize,
    /// Leave the positive out of the InfoNCE denominator.
    #[arg(long)]
    pub exclude_positive: bool,
    /// Train over tools.emb even when refined.emb exists.
    #[arg(long)]
    pub base: bool,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Comma-separated methods: random, bm25, se, lexical, s1, s2, s3.
    #[arg(long, value_delimiter = ',', default_value = "se")]
    pub method: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub alpha_pool: usize,
    /// Include per-query rows in the JSON output.
    #[arg(long)]
    pub per_query: bool,
    /// Also write a CSV table here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "se")]
    pub method: Method,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub no_pin: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// JSON file mirroring the serve configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub stage: Option<Method>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value = "se")]
    pub method: Method,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

struct Workspace {
    dir: PathBuf,
    seed: u64,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn corpus(&self) -> Result<Corpus> {
        Corpus::load_dir(&self.dir)
    }

    fn embedder(&self) -> Result<Embedder> {
        load_embedder(&self.path(artifacts::EMBEDDER))
    }

    fn base(&self) -> Result<EmbeddingTable> {
        read_embedding_table(self.path(artifacts::TABLE))
    }

    /// refined.emb when present (and not overridden), else tools.emb.
    fn live(&self, force_base: bool) -> Result<EmbeddingTable> {
        let refined = self.path(artifacts::REFINED);
        if !force_base && refined.exists() {
            read_embedding_table(refined)
        } else {
            self.base()
        }
    }

    fn serve_config(&self, stage: Method) -> ServeConfig {
        ServeConfig {
            stage,
            data_dir: self.dir.clone(),
            seed: self.seed,
            ..ServeConfig::default()
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let ws = Workspace {
        dir: cli.data_dir.clone(),
        seed: cli.seed,
    };
    match &cli.command {
        Command::Ingest => {
            let corpus = ws.corpus()?;
            print_json(&json!({
                "tools": corpus.tools.len(),
                "queries": corpus.queries.len(),
                "outcomes": corpus.outcomes.len(),
                "multi_tool_queries": corpus.queries.iter().filter(|q| q.relevant.len() > 1).count(),
            }))
        }
        Command::Embed(a) => {
            let spec_path = ws.path(artifacts::EMBEDDER);
            if let Some(dim) = a.synthetic_dim {
                write_json(&spec_path, &EmbedderSpec::synthetic(dim, ws.seed))?;
            }
            let corpus = ws.corpus()?;
            let table = embed_corpus(&ws.embedder()?, &corpus.tools)?;
            let out = a.out.clone().unwrap_or_else(|| ws.path(artifacts::TABLE));
            write_embedding_table(&table, &out)?;
            print_json(&json!({
                "rows": table.len(),
                "dim": table.dim(),
                "generation": table.generation(),
                "path": out,
            }))
        }
        Command::Refine(a) => {
            let config = RefineConfig {
                alpha: a.alpha,
                beta: a.beta,
                iterations: a.iters,
                momentum: a.momentum,
                label_k: a.label_k,
                gate_k: a.gate_k,
            };
            let corpus = ws.corpus()?;
            let data = Dataset::prepare(&corpus, &ws.embedder()?, &a.split.spec(ws.seed))?;
            let labels = label_source(&corpus, a.log_replay, a.unlogged_negative);
            let (published, report) = refine_job(&ws.base()?, &data, &config, &labels)?;
            write_json(&ws.path(artifacts::GATE_REPORT), &report)?;
            if let Some(table) = published {
                write_embedding_table(&table, ws.path(artifacts::REFINED))?;
            }
            print_json(&report)
        }
        Command::TrainRerank(a) => {
            let config = RerankTrainConfig {
                learning_rate: a.lr,
                epochs: a.epochs,
                batch_size: a.batch,
                seed: ws.seed,
                alpha_pool: a.alpha_pool,
                patience: a.patience,
                ..RerankTrainConfig::default()
            };
            let corpus = ws.corpus()?;
            let data = Dataset::prepare(&corpus, &ws.embedder()?, &a.split.spec(ws.seed))?;
            let labels = label_source(&corpus, a.log_replay, false);
            let table = ws.live(a.base)?;
            let (model, context, log) = rerank_job(&table, &corpus, &data, a.k, &config, &labels)?;
            model.save(ws.path(artifacts::RERANK_MODEL))?;
            context.save(&ws.path(artifacts::RERANK_CONTEXT))?;
            print_json(&json!({
                "table_generation": table.generation(),
                "params": model.param_count(),
                "best_epoch": log.best_epoch,
                "train_loss": log.train_loss,
                "val_loss": log.val_loss,
            }))
        }
        Command::TrainAdapter(a) => {
            let config = AdapterTrainConfig {
                learning_rate: a.lr,
                loss: InfoNce {
                    tau: a.tau,
                    include_positive: !a.exclude_positive,
                },
                epochs: a.epochs,
                batch_size: a.batch,
                seed: ws.seed,
                ..AdapterTrainConfig::default()
            };
            let corpus = ws.corpus()?;
            let data = Dataset::prepare(&corpus, &ws.embedder()?, &a.split.spec(ws.seed))?;
            let source = ws.live(a.base)?;
            let (model, published, report) =
                adapter_job(&source, &data, a.pool_c, a.hidden, a.gate_k, &config)?;
            if let Some(table) = published {
                model.save(ws.path(artifacts::ADAPTER_MODEL))?;
                write_embedding_table(&table, ws.path(artifacts::ADAPTED))?;
            }
            print_json(&report)
        }
        Command::Eval(a) => {
            let corpus = ws.corpus()?;
            let mut cfg = ws.serve_config(Method::Se);
            cfg.alpha_pool = a.alpha_pool;
            let engine = Engine::load(&cfg)?;
            let data = Dataset::prepare(&corpus, engine.embedder(), &a.split.spec(ws.seed))?;
            let mut reports = Vec::new();
            for &method in &a.method {
                let mut r = evaluate_method(&engine, method, &data.test, &a.k)?;
                r.split_seed = Some(ws.seed);
                if !a.per_query {
                    r.per_query.clear();
                }
                reports.push(r);
            }
            if let Some(path) = &a.csv {
                let mut csv = MetricsReport::csv_header(&a.k);
                for r in &reports {
                    csv.push('\n');
                    csv.push_str(&r.csv_row());
                }
                csv.push('\n');
                std::fs::write(path, csv).map_err(|e| Error::io(path, e))?;
            }
            match reports.as_slice() {
                [single] => print_json(single),
                many => print_json(&many),
            }
        }
        Command::Bench(a) => {
            let corpus = ws.corpus()?;
            let engine = Engine::load(&ws.serve_config(a.method))?;
            let texts: Vec<String> = corpus.queries.iter().map(|q| q.text.clone()).collect();
            let opts = BenchOptions {
                k: a.k,
                repetitions: a.reps,
                pin_core: !a.no_pin,
            };
            print_json(&bench_latency(&engine, a.method, &texts, &opts)?)
        }
        Command::Serve(a) => {
            let mut cfg = match &a.config {
                Some(p) => ServeConfig::load(p)?,
                None => ws.serve_config(Method::Se),
            };
            if let Some(b) = &a.bind {
                cfg.bind = b.clone();
            }
            if let Some(s) = a.stage {
                cfg.stage = s;
            }
            if let Some(k) = a.k {
                cfg.k = k;
            }
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::io(&cfg.bind, e))?;
            rt.block_on(http_serve(cfg))
        }
        Command::Select(a) => {
            let engine = Arc::new(Engine::load(&ws.serve_config(a.method))?);
            let start = std::time::Instant::now();
            let sel = engine.select(a.method, &a.query, a.k)?;
            print_json(&SelectResponse {
                tools: sel.candidates.entries,
                generation: sel.generation,
                latency_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        }
    }
}
