//! Benchmark harness: ingestion checks, question scoring, the deletion
//! delta protocol and retrieval latency.
//!
//! Items are newline-delimited JSON. Ingestion items state graph facts in a
//! small syntax (see [`GraphFact`]); question items list text fragments the
//! answer must contain. `supporting_objects` name corpus files (or record ids
//! in hex).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::extract::caption::CaptionClient;
use crate::extract::loader::load_dir;
use crate::ingest::{ingest_batch, ElapsedStats, Pipeline};
use crate::model::{Label, Node, NodeId, RecordId};
use crate::retrieval::{answer_query, retrieve, Answer, Generator, RetrievalConfig};
use crate::store::Store;
use crate::text::canonicalize;
use crate::vector::Embedder;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("items line {line}: {message}")]
    Item { line: usize, message: String },
    #[error("corpus: {0}")]
    Corpus(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Ingestion,
    Reasoning,
    Deletion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub scenario: Scenario,
    pub question: String,
    pub gold_facts: Vec<String>,
    #[serde(default)]
    pub supporting_objects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_credit_answer: Option<String>,
}

impl BenchmarkItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.gold_facts.is_empty() {
            return Err(format!("{}: no gold facts", self.id));
        }
        match self.scenario {
            Scenario::Deletion if self.supporting_objects.is_empty() => {
                Err(format!("{}: deletion items need a supporting object", self.id))
            }
            Scenario::Ingestion => {
                for f in &self.gold_facts {
                    GraphFact::parse(f).map_err(|e| format!("{}: {e}", self.id))?;
                }
                Ok(())
            }
            _ if self.question.trim().is_empty() => Err(format!("{}: empty question", self.id)),
            _ => Ok(()),
        }
    }
}

/// Parses an items file. Blank lines are skipped; ids must be unique.
pub fn parse_items(text: &str) -> Result<Vec<BenchmarkItem>, EvalError> {
    let mut out: Vec<BenchmarkItem> = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Item { line: i + 1, message };
        let item: BenchmarkItem = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        item.validate().map_err(err)?;
        if !ids.insert(item.id.clone()) {
            return Err(err(format!("duplicate id {}", item.id)));
        }
        out.push(item);
    }
    Ok(out)
}

pub fn load_items(path: &Path) -> Result<Vec<BenchmarkItem>, EvalError> {
    parse_items(&std::fs::read_to_string(path)?)
}

/// A structural claim about the graph.
///
/// * `Label:Name` - a node with that label and name
/// * `Src -predicate-> Dst` - an edge between two named nodes
/// * `Name.key = value` - a property value on a named node
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphFact {
    Node { label: Label, name: String },
    Edge { src: String, predicate: String, dst: String },
    Property { name: String, key: String, value: String },
}

impl GraphFact {
    pub fn parse(s: &str) -> Result<GraphFact, String> {
        let s = s.trim();
        if let Some((src, rest)) = s.split_once(" -") {
            let (predicate, dst) = rest.split_once("-> ").ok_or_else(|| format!("edge fact {s:?} lacks '-> '"))?;
            let (src, dst) = (src.trim(), dst.trim());
            if src.is_empty() || dst.is_empty() || predicate.is_empty() {
                return Err(format!("incomplete edge fact {s:?}"));
            }
            return Ok(GraphFact::Edge { src: src.into(), predicate: predicate.into(), dst: dst.into() });
        }
        if let Some((lhs, value)) = s.split_once(" = ") {
            let (name, key) = lhs.rsplit_once('.').ok_or_else(|| format!("property fact {s:?} lacks 'name.key'"))?;
            if name.trim().is_empty() || key.trim().is_empty() || value.trim().is_empty() {
                return Err(format!("incomplete property fact {s:?}"));
            }
            return Ok(GraphFact::Property { name: name.trim().into(), key: key.trim().into(), value: value.trim().into() });
        }
        let (label, name) = s.split_once(':').ok_or_else(|| format!("unrecognised fact {s:?}"))?;
        let label: Label = label.trim().parse().map_err(|_| format!("unknown label in {s:?}"))?;
        if name.trim().is_empty() {
            return Err(format!("node fact {s:?} has no name"));
        }
        Ok(GraphFact::Node { label, name: name.trim().into() })
    }

    pub fn holds(&self, store: &Store) -> bool {
        match self {
            GraphFact::Node { label, name } => named(store, name).any(|n| n.label == *label),
            GraphFact::Edge { src, predicate, dst } => {
                let dsts: BTreeSet<NodeId> = named(store, dst).map(|n| n.id).collect();
                named(store, src).any(|s| {
                    store.edges().any(|e| e.src == s.id && e.predicate == *predicate && dsts.contains(&e.dst))
                })
            }
            GraphFact::Property { name, key, value } => named(store, name).any(|n| {
                n.properties
                    .get(key)
                    .is_some_and(|v| canonicalize(&v.to_string()) == canonicalize(value))
            }),
        }
    }
}

fn named<'a>(store: &'a Store, name: &str) -> impl Iterator<Item = &'a Node> {
    let key = canonicalize(name);
    store.nodes().filter(move |n| canonicalize(&n.display_name) == key)
}

pub trait Scorer: Send + Sync {
    fn score(&self, question: &str, gold: &[String], answer: &str) -> Result<u8, String>;
}

/// 5 when every gold fragment appears in the answer (case-insensitive),
/// 3 when at least half do, 1 otherwise.
#[derive(Debug, Default, Clone, Copy)]
pub struct DeterministicScorer;

pub fn rubric(found: usize, total: usize) -> u8 {
    if found == total {
        5
    } else if 2 * found >= total {
        3
    } else {
        1
    }
}

impl Scorer for DeterministicScorer {
    fn score(&self, _question: &str, gold: &[String], answer: &str) -> Result<u8, String> {
        let hay = answer.to_lowercase();
        let found = gold.iter().filter(|g| hay.contains(&g.to_lowercase())).count();
        Ok(rubric(found, gold.len()))
    }
}

/// Refusals score 1 whatever the scorer thinks.
pub fn score_answer(scorer: &dyn Scorer, item: &BenchmarkItem, answer: &Answer) -> Result<u8, String> {
    if answer.refused {
        return Ok(1);
    }
    scorer.score(&item.question, &item.gold_facts, &answer.text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaResult {
    pub item: String,
    pub score_0: u8,
    pub score_1: u8,
    pub delta: i8,
    pub deleted: Vec<NodeId>,
    /// Deleted ids that still showed up in the post-deletion subgraph.
    pub leaked: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub scenario: Scenario,
    pub score: u8,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub citations: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_facts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<DeltaResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ItemResult {
    fn failed(item: &BenchmarkItem, error: String) -> Self {
        ItemResult {
            id: item.id.clone(),
            scenario: item.scenario,
            score: 1,
            passed: false,
            answer: None,
            citations: Vec::new(),
            failed_facts: Vec::new(),
            delta: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub objects: usize,
    pub items: usize,
    pub ingestion_checks: usize,
    pub ingestion_passed: usize,
    /// Reasoning and deletion items together.
    pub questions: usize,
    pub questions_full_marks: usize,
    pub deletion_items: usize,
    pub deletion_max_delta: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub totals: Totals,
    pub load_failures: Vec<(String, String)>,
    pub results: Vec<ItemResult>,
}

/// Report plus the timing that varies between runs.
#[derive(Debug)]
pub struct SuiteRun {
    pub report: SuiteReport,
    pub store: Store,
    pub ingestion: Option<ElapsedStats>,
}

pub struct SuiteOptions<'a> {
    pub pipeline: Pipeline,
    pub retrieval: RetrievalConfig,
    pub generator: &'a dyn Generator,
    pub scorer: &'a dyn Scorer,
    pub captioner: &'a dyn CaptionClient,
}

/// Ingests `corpus` into a fresh in-memory store and runs every item.
pub fn run_suite(corpus: &Path, items: &[BenchmarkItem], opts: &SuiteOptions<'_>) -> Result<SuiteRun, EvalError> {
    if !corpus.is_dir() {
        return Err(EvalError::Corpus(format!("{} is not a directory", corpus.display())));
    }
    let loaded = load_dir(corpus, opts.captioner)?;
    let mut store = Store::in_memory(opts.pipeline.embedder.dimension());
    let batch: Vec<_> = loaded.records.iter().map(|l| (l.record.clone(), Some(l.origin.clone()))).collect();
    let ingested = ingest_batch(&mut store, &opts.pipeline, &batch);

    let mut report = SuiteReport::default();
    report.load_failures.extend(loaded.failures.iter().map(|f| (f.origin.clone(), f.error.to_string())));
    report.load_failures.extend(
        ingested
            .failures
            .iter()
            .map(|f| (f.origin.clone().unwrap_or_else(|| f.record.to_string()), f.error.to_string())),
    );
    report.totals.objects = loaded.records.len() + loaded.failures.len();

    for item in items {
        let r = match item.scenario {
            Scenario::Ingestion => check_ingestion(&store, item),
            Scenario::Reasoning => ask(&store, item, opts).unwrap_or_else(|e| ItemResult::failed(item, e)),
            Scenario::Deletion => delta_protocol(&store, item, opts).unwrap_or_else(|e| ItemResult::failed(item, e)),
        };
        report.results.push(r);
    }
    report.totals = tally(report.totals.objects, &report.results);
    Ok(SuiteRun { report, store, ingestion: ingested.stats })
}

fn tally(objects: usize, results: &[ItemResult]) -> Totals {
    let mut t = Totals { objects, items: results.len(), ..Totals::default() };
    for r in results {
        t.errors += r.error.is_some() as usize;
        match r.scenario {
            Scenario::Ingestion => {
                t.ingestion_checks += 1;
                t.ingestion_passed += r.passed as usize;
            }
            Scenario::Reasoning | Scenario::Deletion => {
                t.questions += 1;
                t.questions_full_marks += (r.score == 5) as usize;
            }
        }
        if r.scenario == Scenario::Deletion {
            t.deletion_items += 1;
            t.deletion_max_delta += r.delta.as_ref().is_some_and(|d| d.delta == 4) as usize;
        }
    }
    t
}

fn check_ingestion(store: &Store, item: &BenchmarkItem) -> ItemResult {
    let mut failed = Vec::new();
    for f in &item.gold_facts {
        match GraphFact::parse(f) {
            Ok(fact) if fact.holds(store) => {}
            _ => failed.push(f.clone()),
        }
    }
    let score = rubric(item.gold_facts.len() - failed.len(), item.gold_facts.len());
    ItemResult {
        id: item.id.clone(),
        scenario: item.scenario,
        score,
        passed: failed.is_empty(),
        answer: None,
        citations: Vec::new(),
        failed_facts: failed,
        delta: None,
        error: None,
    }
}

fn ask(store: &Store, item: &BenchmarkItem, opts: &SuiteOptions<'_>) -> Result<ItemResult, String> {
    let out = answer_query(store, opts.pipeline.embedder.as_ref(), &item.question, &opts.retrieval, opts.generator)
        .map_err(|e| e.to_string())?;
    let score = score_answer(opts.scorer, item, &out.answer)?;
    Ok(ItemResult {
        id: item.id.clone(),
        scenario: item.scenario,
        score,
        passed: score == 5,
        answer: Some(out.answer.text),
        citations: out.answer.citations,
        failed_facts: Vec::new(),
        delta: None,
        error: None,
    })
}

/// Record ids named by `objects`, looked up by ledger origin or hex id.
pub fn resolve_objects(store: &Store, objects: &[String]) -> Result<Vec<RecordId>, String> {
    objects
        .iter()
        .map(|o| {
            store
                .records()
                .find(|r| r.origin.as_deref() == Some(o.as_str()) || r.id.to_string() == *o)
                .map(|r| r.id)
                .ok_or_else(|| format!("supporting object {o} was not ingested"))
        })
        .collect()
}

fn delta_protocol(store: &Store, item: &BenchmarkItem, opts: &SuiteOptions<'_>) -> Result<ItemResult, String> {
    let mut before = ask(store, item, opts)?;
    let records = resolve_objects(store, &item.supporting_objects)?;

    let mut scratch = store.clone_in_memory();
    let mut deleted = BTreeSet::new();
    for rid in records {
        let head = scratch.records().find(|r| r.id == rid).and_then(|r| r.head);
        let Some(head) = head.filter(|h| scratch.contains(*h)) else {
            continue;
        };
        let receipt = scratch.delete_cascade(head).map_err(|e| e.to_string())?;
        deleted.extend(receipt.deleted_nodes);
    }
    if deleted.is_empty() {
        return Err("no head node to delete for the supporting objects".into());
    }
    let embedder: &dyn Embedder = opts.pipeline.embedder.as_ref();
    let after = answer_query(&scratch, embedder, &item.question, &opts.retrieval, opts.generator);
    let (score_1, leaked) = match after {
        Ok(out) => {
            let leaked = out.subgraph.node_ids().into_iter().filter(|id| deleted.contains(id)).collect();
            (score_answer(opts.scorer, item, &out.answer)?, leaked)
        }
        Err(e) => return Err(e.to_string()),
    };
    let d = DeltaResult {
        item: item.id.clone(),
        score_0: before.score,
        score_1,
        delta: before.score as i8 - score_1 as i8,
        deleted: deleted.into_iter().collect(),
        leaked,
    };
    before.passed = before.score == 5;
    before.delta = Some(d);
    Ok(before)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "ingestion")]
    Ingestion,
    #[serde(rename = "retrieval_1hop")]
    Retrieval1Hop,
    #[serde(rename = "retrieval_Nhop")]
    RetrievalNHop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub phase: Phase,
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl LatencyReport {
    pub fn from_stats(phase: Phase, s: &ElapsedStats) -> Self {
        LatencyReport { phase, samples: s.samples, mean_ms: s.mean_ms, p50_ms: s.p50_ms, p95_ms: s.p95_ms }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyOutcome {
    pub reports: Vec<LatencyReport>,
    /// No samples were taken (zero trials or no queries).
    pub insufficient: bool,
}

/// Times anchor + expand + serialize for each query, once at one hop and
/// once at `cfg.n_hops`, after one untimed warm-up pass. Queries that fail
/// to retrieve are timed all the same.
pub fn measure_latency(
    store: &Store,
    embedder: &dyn Embedder,
    queries: &[String],
    trials: usize,
    cfg: &RetrievalConfig,
) -> LatencyOutcome {
    if trials == 0 || queries.is_empty() {
        return LatencyOutcome { reports: Vec::new(), insufficient: true };
    }
    let mut reports = Vec::new();
    let hops = [(Phase::Retrieval1Hop, 1), (Phase::RetrievalNHop, cfg.n_hops.max(1))];
    for (phase, n_hops) in hops {
        let c = RetrievalConfig { n_hops, ..cfg.clone() };
        for q in queries {
            let _ = retrieve(store, embedder, q, &c);
        }
        let mut samples = Vec::with_capacity(trials * queries.len());
        for _ in 0..trials {
            for q in queries {
                let t = Instant::now();
                let _ = retrieve(store, embedder, q, &c);
                samples.push(t.elapsed().as_secs_f64() * 1000.0);
            }
        }
        let stats = ElapsedStats::of(&samples).expect("non-empty samples");
        reports.push(LatencyReport::from_stats(phase, &stats));
    }
    LatencyOutcome { reports, insufficient: false }
}

pub fn render_table(report: &SuiteReport, latency: &[LatencyReport]) -> String {
    let t = &report.totals;
    let mut s = String::new();
    let _ = writeln!(s, "objects            {}", t.objects);
    let _ = writeln!(s, "items              {}", t.items);
    let _ = writeln!(s, "ingestion checks   {}/{} passed", t.ingestion_passed, t.ingestion_checks);
    let _ = writeln!(s, "questions          {}/{} scored 5", t.questions_full_marks, t.questions);
    let _ = writeln!(s, "deletion items     {}/{} with delta 4", t.deletion_max_delta, t.deletion_items);
    if t.errors > 0 {
        let _ = writeln!(s, "errors             {}", t.errors);
    }
    for l in latency {
        let phase = serde_json::to_value(l.phase).unwrap();
        let _ = writeln!(
            s,
            "{:<18} n={} mean={:.2}ms p50={:.2}ms p95={:.2}ms",
            phase.as_str().unwrap_or_default(),
            l.samples,
            l.mean_ms,
            l.p50_ms,
            l.p95_ms
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<12} {:<10} {:>5}  detail", "item", "scenario", "score");
    for r in &report.results {
        let scen = match r.scenario {
            Scenario::Ingestion => "ingestion",
            Scenario::Reasoning => "reasoning",
            Scenario::Deletion => "deletion",
        };
        let detail = match (&r.error, &r.delta) {
            (Some(e), _) => format!("error: {e}"),
            (None, Some(d)) => format!("{} -> {} (delta {})", d.score_0, d.score_1, d.delta),
            (None, None) if !r.failed_facts.is_empty() => format!("missing: {}", r.failed_facts.join("; ")),
            _ => r.answer.clone().unwrap_or_default(),
        };
        let _ = writeln!(s, "{:<12} {:<10} {:>5}  {}", r.id, scen, r.score, detail);
    }
    s
}
