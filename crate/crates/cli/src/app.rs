//! Operations shared by the command line and the HTTP service.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};

use ruva_core::community::{refresh_communities, CommunityError};
use ruva_core::extract::caption::{CaptionClient, SidecarCaptioner};
use ruva_core::extract::loader::load_dir;
use ruva_core::extract::{Extractor, ReferenceExtractor, SourceRecord};
use ruva_core::ingest::{ingest_batch, ingest_record, BatchReport, IngestError, IngestReport, Pipeline};
use ruva_core::model::{DeletionReceipt, Edge, Label, Node, NodeId, Timestamp};
use ruva_core::portable::{export_portable, import_portable, ImportSummary, PortableError};
use ruva_core::remote::{HttpCaptioner, HttpCompletion, HttpEmbedder, HttpExtractor};
use ruva_core::retrieval::{
    answer_query, Generator, ModelGenerator, QueryOutcome, RetrievalConfig, RetrievalError, StructuredGenerator,
};
use ruva_core::store::{Direction, GraphSnapshot, OpenOptions, RecordEntry, Store, StoreError, StoreStats};
use ruva_core::vector::{Embedder, TrigramEmbedder};

use crate::config::{ServiceConfig, Source};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownNode(_) => AppError::NotFound(e.to_string()),
            StoreError::CannotDeleteRoot => AppError::BadRequest(e.to_string()),
            StoreError::NotEmpty => AppError::Conflict(e.to_string()),
            _ => AppError::Internal(e.to_string()),
        }
    }
}

impl From<RetrievalError> for AppError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::InvalidConfig(_) | RetrievalError::EmptyQuery => AppError::BadRequest(e.to_string()),
            _ => AppError::Internal(e.to_string()),
        }
    }
}

impl From<PortableError> for AppError {
    fn from(e: PortableError) -> Self {
        match e {
            PortableError::Malformed { .. } => AppError::BadRequest(e.to_string()),
            PortableError::NotEmpty => AppError::Conflict(e.to_string()),
            _ => AppError::Internal(e.to_string()),
        }
    }
}

impl From<IngestError> for AppError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Extract(_) => AppError::BadRequest(e.to_string()),
            _ => AppError::Internal(e.to_string()),
        }
    }
}

impl From<CommunityError> for AppError {
    fn from(e: CommunityError) -> Self {
        AppError::Internal(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Internal(e.to_string())
    }
}

pub type AppResult<T> = Result<T, AppError>;

pub fn parse_node_id(s: &str) -> AppResult<NodeId> {
    s.trim().parse().map_err(|_| AppError::BadRequest(format!("{s:?} is not a 32-hex-character node id")))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QueryRequest {
    pub question: String,
    #[serde(default)]
    pub n_hops: Option<u32>,
    #[serde(default)]
    pub k_anchors: Option<usize>,
    #[serde(default)]
    pub include_communities: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Neighbour {
    pub predicate: String,
    pub direction: Direction,
    pub id: NodeId,
    pub label: Label,
    pub display_name: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Inspection {
    pub node: Node,
    pub neighbours: Vec<Neighbour>,
    pub edges: Vec<Edge>,
    pub records: Vec<RecordEntry>,
    pub community: Option<u32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Member {
    pub id: NodeId,
    pub label: Label,
    pub display_name: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Community {
    pub community: u32,
    pub members: Vec<Member>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommunitiesView {
    pub levels: usize,
    pub level: usize,
    pub quality: Option<f64>,
    pub communities: Vec<Community>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadFailureView {
    pub origin: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestOutcome {
    pub reports: Vec<IngestReport>,
    pub failures: Vec<LoadFailureView>,
}

impl IngestOutcome {
    fn from_batch(batch: BatchReport, mut load_failures: Vec<LoadFailureView>) -> Self {
        load_failures.extend(batch.failures.into_iter().map(|f| LoadFailureView {
            origin: f.origin.unwrap_or_else(|| f.record.to_string()),
            error: f.error,
        }));
        IngestOutcome { reports: batch.reports, failures: load_failures }
    }
}

pub struct App {
    pub config: ServiceConfig,
    pub store: Arc<RwLock<Store>>,
    pub pipeline: Pipeline,
    pub generator: Arc<dyn Generator>,
    pub captioner: Arc<dyn CaptionClient>,
}

impl App {
    /// Opens (creating if needed) the configured store file.
    pub fn open(config: ServiceConfig) -> AppResult<App> {
        let opts = OpenOptions { create_if_missing: true, dimension: config.dimension };
        let store = Store::open_with(&config.store_path, opts)?;
        Ok(App::with_store(config, store))
    }

    pub fn with_store(config: ServiceConfig, store: Store) -> App {
        let dim = store.dimension();
        let embedder: Arc<dyn Embedder> = match &config.embedder {
            Source::Reference => Arc::new(TrigramEmbedder::new(dim)),
            Source::External(url) => Arc::new(HttpEmbedder::new(url.clone(), dim)),
        };
        let extractor: Arc<dyn Extractor> = match &config.extractor {
            Source::Reference => Arc::new(ReferenceExtractor),
            Source::External(url) => Arc::new(HttpExtractor::new(url.clone())),
        };
        let generator: Arc<dyn Generator> = match &config.generator {
            Source::Reference => Arc::new(StructuredGenerator),
            Source::External(url) => Arc::new(ModelGenerator { client: HttpCompletion::new(url.clone()) }),
        };
        let captioner: Arc<dyn CaptionClient> = match &config.captioner {
            Source::Reference => Arc::new(SidecarCaptioner),
            Source::External(url) => Arc::new(HttpCaptioner::new(url.clone())),
        };
        let mut pipeline = Pipeline::new(extractor, embedder);
        pipeline.clock = config.clock_ms.map(Timestamp::from_millis);
        App { config, store: Arc::new(RwLock::new(store)), pipeline, generator, captioner }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Store> {
        self.store.read().unwrap_or_else(|p| p.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, Store> {
        self.store.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn stats(&self) -> StoreStats {
        self.read().stats()
    }

    pub fn graph(&self, labels: Option<&BTreeSet<Label>>) -> GraphSnapshot {
        self.read().export_graph(labels)
    }

    pub fn inspect(&self, id: NodeId) -> AppResult<Inspection> {
        let store = self.read();
        let node = store.node(id).cloned().ok_or(StoreError::UnknownNode(id))?;
        let neighbours = store
            .neighbors(id, Direction::Both, None)?
            .into_iter()
            .map(|(e, n)| Neighbour {
                predicate: e.predicate.clone(),
                direction: if e.src == id { Direction::Out } else { Direction::In },
                id: n.id,
                label: n.label,
                display_name: n.display_name,
            })
            .collect();
        let edges = store.incident_edges(id).into_iter().filter_map(|e| store.edge(e).cloned()).collect();
        let records = store.records().filter(|r| node.provenance.contains(&r.id)).cloned().collect();
        let community = store.communities().community_of(0, id).filter(|_| !store.communities().stale);
        Ok(Inspection { node, neighbours, edges, records, community })
    }

    pub fn forget(&self, id: NodeId) -> AppResult<DeletionReceipt> {
        Ok(self.write().delete_cascade(id)?)
    }

    pub fn ingest_dir(&self, dir: &Path) -> AppResult<IngestOutcome> {
        if !dir.is_dir() {
            return Err(AppError::BadRequest(format!("{} is not a directory", dir.display())));
        }
        let loaded = load_dir(dir, self.captioner.as_ref())?;
        let failures = loaded
            .failures
            .iter()
            .map(|f| LoadFailureView { origin: f.origin.clone(), error: f.error.to_string() })
            .collect();
        let batch: Vec<(SourceRecord, Option<String>)> =
            loaded.records.into_iter().map(|l| (l.record, Some(l.origin))).collect();
        let report = ingest_batch(&mut self.write(), &self.pipeline, &batch);
        Ok(IngestOutcome::from_batch(report, failures))
    }

    pub fn ingest_record(&self, record: &SourceRecord, origin: Option<String>) -> AppResult<IngestReport> {
        Ok(ingest_record(&mut self.write(), &self.pipeline, record, origin)?)
    }

    fn retrieval_config(&self, req: &QueryRequest) -> RetrievalConfig {
        let mut cfg = self.config.retrieval;
        if let Some(h) = req.n_hops {
            cfg.n_hops = h;
        }
        if let Some(k) = req.k_anchors {
            cfg.k_anchors = k;
        }
        if let Some(c) = req.include_communities {
            cfg.include_communities = c;
        }
        cfg
    }

    pub fn query(&self, req: &QueryRequest) -> AppResult<QueryOutcome> {
        let cfg = self.retrieval_config(req);
        cfg.validate()?;
        if cfg.include_communities {
            self.refresh_communities()?;
        }
        let store = self.read();
        Ok(answer_query(&store, self.pipeline.embedder.as_ref(), &req.question, &cfg, self.generator.as_ref())?)
    }

    /// Recomputes communities when stale. A graph with nothing but the User
    /// root has none to compute.
    pub fn refresh_communities(&self) -> AppResult<()> {
        if !self.read().communities().stale {
            return Ok(());
        }
        match refresh_communities(&mut self.write(), &self.config.leiden) {
            Ok(_) | Err(CommunityError::EmptyGraph) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn communities(&self, level: Option<usize>) -> AppResult<CommunitiesView> {
        self.refresh_communities()?;
        let store = self.read();
        let state = store.communities();
        let levels = state.levels.len();
        let level = level.unwrap_or(0);
        if levels == 0 {
            return Ok(CommunitiesView { levels, level, quality: None, communities: Vec::new() });
        }
        let part = state
            .levels
            .get(level)
            .ok_or_else(|| AppError::BadRequest(format!("level {level} does not exist (have {levels})")))?;
        let mut groups: BTreeMap<u32, Vec<Member>> = BTreeMap::new();
        for (id, c) in &part.assignment {
            if let Some(n) = store.node(*id) {
                groups.entry(*c).or_default().push(Member {
                    id: n.id,
                    label: n.label,
                    display_name: n.display_name.clone(),
                });
            }
        }
        let communities = groups.into_iter().map(|(community, members)| Community { community, members }).collect();
        Ok(CommunitiesView { levels, level, quality: Some(part.quality), communities })
    }

    pub fn export(&self, w: impl std::io::Write) -> AppResult<()> {
        Ok(export_portable(&self.read(), w)?)
    }

    pub fn import(&self, r: impl BufRead) -> AppResult<ImportSummary> {
        Ok(import_portable(&mut self.write(), r)?)
    }
}
