//! Write path: extract, resolve, persist, link by time.
//!
//! One record commits as one transaction. Extraction runs before the store
//! is touched, so a slow extractor never holds the writer.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::extract::{extract_triples, head_of, ExtractError, Extractor, Mention, SourceRecord, Triple, TripleObject};
use crate::model::{Edge, EdgeId, Label, Node, NodeId, Properties, RecordId, Scalar, Timestamp};
use crate::resolve::{head_key, reembed, resolve_into, MergeError, Outcome, ResolverConfig};
use crate::store::{RecordEntry, Store, StoreError, Txn};
use crate::vector::{EmbedError, Embedder};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Merge(#[from] MergeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub record: RecordId,
    pub created_nodes: Vec<NodeId>,
    /// Mentions that resolved to a node that already existed.
    pub merged_into: Vec<(String, NodeId)>,
    pub created_edges: usize,
    pub skipped_duplicate: bool,
    pub elapsed_ms: f64,
}

impl IngestReport {
    fn skipped(record: RecordId, started: Instant) -> Self {
        IngestReport {
            record,
            created_nodes: Vec::new(),
            merged_into: Vec::new(),
            created_edges: 0,
            skipped_duplicate: true,
            elapsed_ms: ms_since(started),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElapsedStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl ElapsedStats {
    /// Nearest-rank percentiles. `None` for an empty sample.
    pub fn of(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(ElapsedStats {
            samples: v.len(),
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub record: RecordId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub reports: Vec<IngestReport>,
    pub failures: Vec<BatchFailure>,
    /// Over non-skipped records; absent when there were none.
    pub stats: Option<ElapsedStats>,
}

/// Extractor, embedder and resolver settings used for every record.
#[derive(Clone)]
pub struct Pipeline {
    pub extractor: Arc<dyn Extractor>,
    pub embedder: Arc<dyn Embedder>,
    pub resolver: ResolverConfig,
    /// Fixed clock for reproducible stores; `None` reads the system clock.
    pub clock: Option<Timestamp>,
}

impl Pipeline {
    pub fn new(extractor: Arc<dyn Extractor>, embedder: Arc<dyn Embedder>) -> Self {
        Pipeline { extractor, embedder, resolver: ResolverConfig::default(), clock: None }
    }

    pub fn reference(dimension: usize) -> Self {
        Pipeline::new(
            Arc::new(crate::extract::ReferenceExtractor),
            Arc::new(crate::vector::TrigramEmbedder::new(dimension)),
        )
    }

    pub fn with_clock(mut self, t: Timestamp) -> Self {
        self.clock = Some(t);
        self
    }

    fn now(&self) -> Timestamp {
        self.clock.unwrap_or_else(Timestamp::now)
    }

    /// Extraction half of [`ingest_record`]; needs no store access.
    pub fn extract(&self, record: &SourceRecord) -> Result<Vec<Triple>, IngestError> {
        let triples = extract_triples(record, self.extractor.as_ref())?;
        if head_of(&triples).is_none() {
            return Err(ExtractError::Extractor("no head triple from the User root".into()).into());
        }
        Ok(triples)
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Ingests one record. A record whose id is already in the ledger is
/// reported as a duplicate and changes nothing.
pub fn ingest_record(
    store: &mut Store,
    pipeline: &Pipeline,
    record: &SourceRecord,
    origin: Option<String>,
) -> Result<IngestReport, IngestError> {
    let started = Instant::now();
    if store.has_record(record.id) {
        return Ok(IngestReport::skipped(record.id, started));
    }
    let triples = pipeline.extract(record)?;
    apply_triples(store, pipeline, record, origin, &triples, started)
}

#[derive(Default)]
struct Pending {
    properties: Properties,
    start: Option<Timestamp>,
    end: Option<Timestamp>,
}

fn literal_into(p: &mut Pending, predicate: &str, value: &Scalar) {
    match (predicate, value) {
        ("start", Scalar::Instant(t)) => p.start = Some(*t),
        ("end", Scalar::Instant(t)) => p.end = Some(*t),
        _ => {
            p.properties.entry(predicate.to_string()).or_insert_with(|| value.clone());
        }
    }
}

fn mention_id(m: &Mention) -> (Label, String) {
    (m.type_hint, m.key.clone())
}

/// Writes already-extracted triples for `record` in one transaction.
pub fn apply_triples(
    store: &mut Store,
    pipeline: &Pipeline,
    record: &SourceRecord,
    origin: Option<String>,
    triples: &[Triple],
    started: Instant,
) -> Result<IngestReport, IngestError> {
    if store.has_record(record.id) {
        return Ok(IngestReport::skipped(record.id, started));
    }
    let head_m = head_of(triples)
        .cloned()
        .ok_or_else(|| ExtractError::Extractor("no head triple from the User root".into()))?;
    let rid = record.id;
    let created_at = record.start.unwrap_or_else(|| pipeline.now());
    let embedder = pipeline.embedder.as_ref();

    // Literals attach to their subject; gather them before nodes exist.
    let mut pending: BTreeMap<(Label, String), Pending> = BTreeMap::new();
    for t in triples {
        if let TripleObject::Literal(v) = &t.object {
            literal_into(pending.entry(mention_id(&t.subject)).or_default(), &t.predicate, v);
        }
    }
    let template = |m: &Mention, key: String, pending: &mut BTreeMap<(Label, String), Pending>| {
        let mut n = Node::with_key(m.type_hint, m.surface.clone(), key).source(rid);
        n.created_at = created_at;
        if let Some(p) = pending.remove(&mention_id(m)) {
            n.properties = p.properties;
            if let Some(s) = p.start {
                n = n.interval(s, p.end.filter(|e| *e >= s));
            }
        }
        n
    };

    let mut txn = store.transaction();
    let root = txn.store().user_id();
    let mut report = IngestReport {
        record: rid,
        created_nodes: Vec::new(),
        merged_into: Vec::new(),
        created_edges: 0,
        skipped_duplicate: false,
        elapsed_ms: 0.0,
    };

    let head = template(&head_m, head_key(&head_m.key, &rid), &mut pending);
    let head_id = txn.upsert_node(head)?;
    reembed(&mut txn, head_id, embedder)?;
    report.created_nodes.push(head_id);

    let mut resolved: BTreeMap<(Label, String), NodeId> = BTreeMap::new();
    resolved.insert(mention_id(&head_m), head_id);
    resolved.insert(mention_id(&Mention::user()), root);

    for t in triples {
        let TripleObject::Mention(obj) = &t.object else { continue };
        node_for(&mut txn, pipeline, &t.subject, head_id, &mut resolved, &mut pending, &mut report, &template)?;
        node_for(&mut txn, pipeline, obj, head_id, &mut resolved, &mut pending, &mut report, &template)?;
        // Looked up afterwards: resolving `obj` may have folded the subject.
        let (src, dst) = (resolved[&mention_id(&t.subject)], resolved[&mention_id(obj)]);
        if src == dst {
            continue;
        }
        let e = Edge::new(src, t.predicate.clone(), dst).source(rid);
        if txn.store().edge(e.id).is_none() {
            report.created_edges += 1;
        }
        txn.upsert_edge(e)?;
    }

    // Literals on subjects that never appeared in a mention-valued triple.
    for ((label, key), p) in std::mem::take(&mut pending) {
        if let Some(&id) = resolved.get(&(label, key)).filter(|id| **id != root) {
            let mut n = txn.store().node(id).cloned().ok_or(StoreError::UnknownNode(id))?;
            n.properties = p.properties;
            n.provenance = BTreeSet::from([rid]);
            txn.upsert_node(n)?;
            reembed(&mut txn, id, embedder)?;
        }
    }

    report.created_edges += forge_temporal_links(&mut txn, head_id)?;
    report.created_nodes.retain(|id| txn.store().contains(*id));
    report.created_nodes.sort();
    report.created_nodes.dedup();

    txn.put_record(RecordEntry {
        id: rid,
        modality: record.modality,
        origin,
        head: Some(head_id),
        committed_at: pipeline.now(),
    });
    txn.mark_communities_stale();
    txn.commit()?;
    report.elapsed_ms = ms_since(started);
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn node_for<F>(
    txn: &mut Txn<'_>,
    pipeline: &Pipeline,
    m: &Mention,
    head: NodeId,
    resolved: &mut BTreeMap<(Label, String), NodeId>,
    pending: &mut BTreeMap<(Label, String), Pending>,
    report: &mut IngestReport,
    template: &F,
) -> Result<NodeId, IngestError>
where
    F: Fn(&Mention, String, &mut BTreeMap<(Label, String), Pending>) -> Node,
{
    if let Some(&id) = resolved.get(&mention_id(m)) {
        return Ok(id);
    }
    let node = template(m, m.key.clone(), pending);
    let properties = node.properties.clone();
    let (id, decision, created) =
        resolve_into(txn, m, Some(head), node, pipeline.embedder.as_ref(), &pipeline.resolver)?;
    if created {
        report.created_nodes.push(id);
    } else if !properties.is_empty() {
        let mut n = txn.store().node(id).cloned().ok_or(StoreError::UnknownNode(id))?;
        n.properties = properties;
        txn.upsert_node(n)?;
        reembed(txn, id, pipeline.embedder.as_ref())?;
    }
    // A swap folds an earlier node into `id`; repoint anything that named it.
    for v in resolved.values_mut() {
        if !txn.store().contains(*v) {
            *v = id;
        }
    }
    if let Outcome::Merged(target) = decision.outcome {
        report.merged_into.push((m.surface.clone(), target));
    }
    resolved.insert(mention_id(m), id);
    Ok(id)
}

/// Links `new_head` to every Event whose closed interval overlaps its own.
/// A non-Event head gets `during` edges to those Events. An Event head gets
/// `overlaps` edges between itself and each overlapping Event, from the
/// earlier start to the later (ties by id), plus `during` edges from every
/// overlapping timestamped non-Event node, so the result does not depend on
/// which record arrived first. Edge provenance is the union of both
/// endpoints' provenance. Returns the number of new edges.
pub fn forge_temporal_links(txn: &mut Txn<'_>, new_head: NodeId) -> Result<usize, StoreError> {
    let Some(head) = txn.store().node(new_head).cloned() else {
        return Err(StoreError::UnknownNode(new_head));
    };
    let Some(iv) = head.time_interval() else { return Ok(0) };
    let mut links: Vec<(NodeId, &'static str, NodeId, BTreeSet<RecordId>)> = Vec::new();
    for other in txn.store().nodes() {
        if other.id == head.id || other.label == Label::User {
            continue;
        }
        let Some(ov) = other.time_interval() else { continue };
        if !iv.overlaps(&ov) {
            continue;
        }
        let prov: BTreeSet<RecordId> = head.provenance.union(&other.provenance).copied().collect();
        match (head.label == Label::Event, other.label == Label::Event) {
            (false, true) => links.push((head.id, "during", other.id, prov)),
            (true, false) => links.push((other.id, "during", head.id, prov)),
            (true, true) => {
                let (a, b) = if (iv.start, head.id) <= (ov.start, other.id) { (head.id, other.id) } else { (other.id, head.id) };
                links.push((a, "overlaps", b, prov));
            }
            (false, false) => {}
        }
    }
    let mut created = 0;
    for (src, pred, dst, prov) in links {
        if txn.store().edge(EdgeId::derive(src, pred, dst)).is_none() {
            created += 1;
        }
        txn.upsert_edge(Edge::new(src, pred, dst).sources(prov))?;
    }
    Ok(created)
}

/// Ingests `records` in order. Failures are collected and the batch goes on.
pub fn ingest_batch(store: &mut Store, pipeline: &Pipeline, records: &[(SourceRecord, Option<String>)]) -> BatchReport {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (r, origin) in records {
        match ingest_record(store, pipeline, r, origin.clone()) {
            Ok(rep) => reports.push(rep),
            Err(e) => failures.push(BatchFailure { record: r.id, origin: origin.clone(), error: e.to_string() }),
        }
    }
    let samples: Vec<f64> = reports.iter().filter(|r| !r.skipped_duplicate).map(|r| r.elapsed_ms).collect();
    BatchReport { stats: ElapsedStats::of(&samples), reports, failures }
}

enum Job {
    Record(Box<SourceRecord>, Option<String>),
    Drain(mpsc::Sender<Vec<Result<IngestReport, BatchFailure>>>),
}

/// Background ingestion worker. Records are extracted without the lock and
/// written under a short write lock each, so readers are only held off for
/// one commit at a time.
pub struct IngestQueue {
    tx: mpsc::Sender<Job>,
    worker: Option<thread::JoinHandle<()>>,
}

impl IngestQueue {
    pub fn spawn(store: Arc<RwLock<Store>>, pipeline: Pipeline) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        let worker = thread::Builder::new()
            .name("ingest".into())
            .spawn(move || {
                let mut done = Vec::new();
                for job in rx {
                    match job {
                        Job::Record(r, origin) => done.push(run_job(&store, &pipeline, &r, origin)),
                        Job::Drain(reply) => {
                            let _ = reply.send(std::mem::take(&mut done));
                        }
                    }
                    thread::yield_now();
                }
            })
            .expect("spawn ingest worker");
        IngestQueue { tx, worker: Some(worker) }
    }

    pub fn submit(&self, record: SourceRecord, origin: Option<String>) {
        let _ = self.tx.send(Job::Record(Box::new(record), origin));
    }

    /// Blocks until every submitted record is processed and returns their
    /// outcomes in submission order.
    pub fn drain(&self) -> Vec<Result<IngestReport, BatchFailure>> {
        let (reply, rx) = mpsc::channel();
        if self.tx.send(Job::Drain(reply)).is_err() {
            return Vec::new();
        }
        rx.recv().unwrap_or_default()
    }
}

impl Drop for IngestQueue {
    fn drop(&mut self) {
        let (tx, _) = mpsc::channel();
        drop(std::mem::replace(&mut self.tx, tx));
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn run_job(
    store: &RwLock<Store>,
    pipeline: &Pipeline,
    record: &SourceRecord,
    origin: Option<String>,
) -> Result<IngestReport, BatchFailure> {
    let started = Instant::now();
    let fail = |e: IngestError| BatchFailure { record: record.id, origin: origin.clone(), error: e.to_string() };
    let duplicate = store.read().map(|s| s.has_record(record.id)).unwrap_or(false);
    if duplicate {
        return Ok(IngestReport::skipped(record.id, started));
    }
    let triples = pipeline.extract(record).map_err(fail)?;
    let mut guard = match store.write() {
        Ok(g) => g,
        Err(p) => p.into_inner(),
    };
    apply_triples(&mut guard, pipeline, record, origin.clone(), &triples, started).map_err(fail)
}
