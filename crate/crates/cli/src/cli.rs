//! Command line front end.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use ruva_core::eval::{self, DeterministicScorer, Scorer, SuiteOptions};
use ruva_core::ingest::Pipeline;
use ruva_core::remote::HttpJudge;

use crate::app::{parse_node_id, App, QueryRequest};
use crate::config::{ServiceConfig, Source};

#[derive(Debug, Parser)]
#[command(name = "ruva", version, about = "Local personal knowledge graph: ingest, ask, inspect, forget")]
pub struct Cli {
    /// Store file (default: ~/.ruva/store.rpkg)
    #[arg(long, global = true, env = "RUVA_STORE")]
    pub store: Option<PathBuf>,

    /// TOML configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Machine-readable output
    #[arg(long, global = true)]
    pub json: bool,

    /// External embedding endpoint (default: built-in trigram embedder)
    #[arg(long, global = true)]
    pub embedder_url: Option<String>,

    /// External triple extraction endpoint
    #[arg(long, global = true)]
    pub extractor_url: Option<String>,

    /// External completion endpoint (default: structured generator)
    #[arg(long, global = true)]
    pub generator_url: Option<String>,

    /// External image caption endpoint (default: caption sidecar files)
    #[arg(long, global = true)]
    pub caption_url: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create the store file
    Init {
        /// Embedding dimension of a new store
        #[arg(long)]
        dimension: Option<usize>,
    },
    /// Ingest every record file in a directory
    Ingest { dir: PathBuf },
    /// Ask a question
    Query {
        question: String,
        /// Expansion depth
        #[arg(long)]
        hops: Option<u32>,
        /// Number of anchor nodes
        #[arg(long)]
        anchors: Option<usize>,
        /// Add community co-members of the anchors
        #[arg(long)]
        communities: bool,
    },
    /// Delete a node and everything that depends on it
    Forget { id: String },
    /// Show a node, its neighbours and its source records
    Inspect { id: String },
    /// List communities (recomputed when stale)
    Communities {
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
    /// Write the store as newline-delimited JSON
    Export { file: PathBuf },
    /// Load an export into an empty store
    Import { file: PathBuf },
    /// Run a benchmark suite directory (corpus/ and items.jsonl)
    Bench {
        suite: PathBuf,
        /// Timed retrieval passes over the question set
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Score answers with an external judge instead of the rubric
        #[arg(long)]
        judge_url: Option<String>,
        /// Also write the JSON report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Serve the HTTP API
    Serve {
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        /// Allow a non-loopback bind address and peers
        #[arg(long)]
        unsafe_bind: bool,
    },
}

impl Cli {
    pub fn service_config(&self) -> Result<ServiceConfig> {
        let mut c = match &self.config {
            Some(p) => ServiceConfig::load(p)?,
            None => ServiceConfig::default(),
        };
        if let Some(s) = &self.store {
            c.store_path = s.clone();
        }
        let pick = |url: &Option<String>, current: &Source| match url {
            Some(u) => Source::from_url(Some(u.clone())),
            None => current.clone(),
        };
        c.embedder = pick(&self.embedder_url, &c.embedder);
        c.extractor = pick(&self.extractor_url, &c.extractor);
        c.generator = pick(&self.generator_url, &c.generator);
        c.captioner = pick(&self.caption_url, &c.captioner);
        Ok(c)
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, json: bool, value: &T, human: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if json {
        serde_json::to_writer_pretty(&mut *out, value)?;
        writeln!(out)?;
        Ok(())
    } else {
        human(out)
    }
}

/// Parses `args` and runs the command, writing results to `out`. Returns
/// the process exit code; errors are written to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut config = cli.service_config()?;
    match &cli.command {
        Command::Init { dimension } => {
            if let Some(d) = dimension {
                config.dimension = *d;
            }
            let existed = config.store_path.exists();
            let app = App::open(config)?;
            let stats = app.stats();
            let path = app.config.store_path.display().to_string();
            emit(out, cli.json, &serde_json::json!({ "store": path, "created": !existed, "stats": stats }), |o| {
                let verb = if existed { "already initialised" } else { "created" };
                writeln!(o, "{path}: {verb} ({} nodes)", stats.nodes)?;
                Ok(())
            })
        }
        Command::Ingest { dir } => {
            let app = App::open(config)?;
            let outcome = app.ingest_dir(dir)?;
            emit(out, cli.json, &outcome, |o| {
                let fresh = outcome.reports.iter().filter(|r| !r.skipped_duplicate).count();
                writeln!(
                    o,
                    "{} records ingested, {} already present, {} failed",
                    fresh,
                    outcome.reports.len() - fresh,
                    outcome.failures.len()
                )?;
                for f in &outcome.failures {
                    writeln!(o, "  {}: {}", f.origin, f.error)?;
                }
                Ok(())
            })
        }
        Command::Query { question, hops, anchors, communities } => {
            let app = App::open(config)?;
            let req = QueryRequest {
                question: question.clone(),
                n_hops: *hops,
                k_anchors: *anchors,
                include_communities: Some(*communities),
            };
            let outcome = app.query(&req)?;
            emit(out, cli.json, &outcome, |o| {
                writeln!(o, "{}", outcome.answer.text)?;
                let store = app.read();
                for id in &outcome.answer.citations {
                    let name = store.node(*id).map(|n| format!("{} {:?}", n.label, n.display_name)).unwrap_or_default();
                    writeln!(o, "  [{id}] {name}")?;
                }
                writeln!(
                    o,
                    "({} nodes, {} edges, retrieval {:.1} ms)",
                    outcome.subgraph.nodes.len(),
                    outcome.subgraph.edges.len(),
                    outcome.timings.retrieval_ms
                )?;
                Ok(())
            })
        }
        Command::Forget { id } => {
            let id = parse_node_id(id)?;
            let app = App::open(config)?;
            let receipt = app.forget(id)?;
            serde_json::to_writer_pretty(&mut *out, &receipt)?;
            writeln!(out)?;
            Ok(())
        }
        Command::Inspect { id } => {
            let id = parse_node_id(id)?;
            let app = App::open(config)?;
            let view = app.inspect(id)?;
            emit(out, cli.json, &view, |o| {
                let n = &view.node;
                writeln!(o, "{} {} {:?}", n.id, n.label, n.display_name)?;
                if let (Some(s), Some(e)) = (n.valid_start, n.valid_end) {
                    writeln!(o, "  valid {s} .. {e}")?;
                }
                for (k, v) in &n.properties {
                    writeln!(o, "  {k} = {v}")?;
                }
                for nb in &view.neighbours {
                    let arrow = match nb.direction {
                        ruva_core::store::Direction::In => "<-",
                        _ => "->",
                    };
                    writeln!(o, "  {arrow} {} {} {:?} [{}]", nb.predicate, nb.label, nb.display_name, nb.id)?;
                }
                for r in &view.records {
                    writeln!(o, "  from {} {}", r.modality, r.origin.as_deref().unwrap_or("-"))?;
                }
                Ok(())
            })
        }
        Command::Communities { level } => {
            let app = App::open(config)?;
            let view = app.communities(Some(*level))?;
            emit(out, cli.json, &view, |o| {
                match view.quality {
                    Some(q) => writeln!(o, "level {} of {}, modularity {q:.4}", view.level, view.levels)?,
                    None => writeln!(o, "no communities")?,
                }
                for c in &view.communities {
                    let names: Vec<&str> = c.members.iter().map(|m| m.display_name.as_str()).collect();
                    writeln!(o, "  {:>3}: {}", c.community, names.join(", "))?;
                }
                Ok(())
            })
        }
        Command::Export { file } => {
            let app = App::open(config)?;
            let f = std::fs::File::create(file).with_context(|| format!("creating {}", file.display()))?;
            let mut w = std::io::BufWriter::new(f);
            app.export(&mut w)?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
            let stats = app.stats();
            emit(out, cli.json, &serde_json::json!({ "file": file, "stats": stats }), |o| {
                writeln!(o, "exported {} nodes and {} edges to {}", stats.nodes, stats.edges, file.display())?;
                Ok(())
            })
        }
        Command::Import { file } => {
            let app = App::open(config)?;
            let f = std::fs::File::open(file).with_context(|| format!("opening {}", file.display()))?;
            let summary = app.import(BufReader::new(f))?;
            emit(out, cli.json, &summary, |o| {
                writeln!(o, "imported {} nodes, {} edges, {} embeddings", summary.nodes, summary.edges, summary.embeddings)?;
                Ok(())
            })
        }
        Command::Bench { suite, trials, judge_url, report } => bench(cli, config, suite, *trials, judge_url.as_deref(), report.as_deref(), out),
        Command::Serve { bind, unsafe_bind } => {
            if let Some(b) = bind {
                config.bind_address = *b;
            }
            config.unsafe_bind |= *unsafe_bind;
            config.check_bind()?;
            let app = App::open(config)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::service::serve(app))
        }
    }
}

fn bench(
    cli: &Cli,
    config: ServiceConfig,
    suite: &Path,
    trials: usize,
    judge_url: Option<&str>,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let corpus = suite.join("corpus");
    let items_path = suite.join("items.jsonl");
    if !corpus.is_dir() {
        bail!("{} has no corpus/ directory", suite.display());
    }
    let items = eval::load_items(&items_path).with_context(|| format!("reading {}", items_path.display()))?;
    // The suite runs against a fresh in-memory store, never the user's.
    let mut config = config;
    config.store_path = PathBuf::new();
    let app = App::with_store(config, ruva_core::store::Store::in_memory(ruva_core::vector::DEFAULT_DIMENSION));
    let judge = judge_url.map(HttpJudge::new);
    let scorer: &dyn Scorer = match &judge {
        Some(j) => j,
        None => &DeterministicScorer,
    };
    let pipeline: Pipeline = app.pipeline.clone();
    let opts = SuiteOptions {
        pipeline,
        retrieval: app.config.retrieval,
        generator: app.generator.as_ref(),
        scorer,
        captioner: app.captioner.as_ref(),
    };
    let run = eval::run_suite(&corpus, &items, &opts)?;
    let questions: Vec<String> = items
        .iter()
        .filter(|i| i.scenario != eval::Scenario::Ingestion)
        .map(|i| i.question.clone())
        .collect();
    let latency = eval::measure_latency(&run.store, opts.pipeline.embedder.as_ref(), &questions, trials, &opts.retrieval);
    let mut phases = Vec::new();
    if let Some(s) = &run.ingestion {
        phases.push(eval::LatencyReport::from_stats(eval::Phase::Ingestion, s));
    }
    phases.extend(latency.reports.iter().cloned());
    let doc = serde_json::json!({
        "report": run.report,
        "latency": phases,
        "latency_insufficient": latency.insufficient,
    });
    if let Some(p) = report_path {
        std::fs::write(p, serde_json::to_string_pretty(&doc)?)?;
    }
    emit(out, cli.json, &doc, |o| {
        write!(o, "{}", eval::render_table(&run.report, &phases))?;
        Ok(())
    })
}
