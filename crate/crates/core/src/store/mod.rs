//! Single-file hybrid graph + vector store.
//!
//! All writes go through a [`Txn`]: row mutations are applied eagerly to the
//! in-memory tables while their inverses are journaled, so a dropped or
//! failed transaction rolls back exactly. `commit` appends the redo list as
//! one checksummed frame and fsyncs before returning. Cascade deletion
//! rewrites the file from a snapshot so excised rows are physically gone.
//!
//! The store is single-writer: mutation needs `&mut Store`. Share it across
//! threads behind a reader-writer lock; readers then observe the last
//! committed state.

mod log;
mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use self::log::{FORMAT_VERSION, MAGIC};
pub(crate) use self::state::Mutation;
pub use self::state::{AliasKey, RecordEntry};
use self::log::LogFile;
use self::state::State;
use crate::community::CommunityState;
use crate::model::{
    DeletionReceipt, Edge, EdgeId, InvalidLabel, Label, Node, NodeId, Properties, RecordId, Timestamp,
};
use crate::text::is_snake_case;
use crate::vector::{ScoredNode, VectorError, VectorIndex, DEFAULT_DIMENSION};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("corrupt store file: {0}")]
    Corrupt(String),
    #[error("unsupported store format version {found} (supported: {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid label {0:?}")]
    InvalidLabel(String),
    #[error("the store already has a User root")]
    SecondUserRoot,
    #[error("canonical key must be non-empty for {0} nodes")]
    EmptyKey(Label),
    #[error("node {0} has no provenance")]
    MissingProvenance(NodeId),
    #[error("valid_start is after valid_end on node {0}")]
    InvalidInterval(NodeId),
    #[error("invalid predicate {0:?}: must be snake_case")]
    InvalidPredicate(String),
    #[error("edge endpoint {0} does not exist")]
    DanglingEndpoint(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("the User root cannot be deleted")]
    CannotDeleteRoot,
    #[error("node {0} still has incident edges")]
    NodeHasEdges(NodeId),
    #[error("store is not empty")]
    NotEmpty,
    #[error(transparent)]
    Vector(#[from] VectorError),
}

impl From<InvalidLabel> for StoreError {
    fn from(e: InvalidLabel) -> Self {
        StoreError::InvalidLabel(e.0)
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Out,
    In,
    Both,
}

#[derive(Debug, Clone, Copy)]
pub struct OpenOptions {
    pub create_if_missing: bool,
    /// Used only when creating; an existing file keeps its own dimension.
    pub dimension: usize,
}

impl Default for OpenOptions {
    fn default() -> Self {
        OpenOptions { create_if_missing: true, dimension: DEFAULT_DIMENSION }
    }
}

/// Point-in-time copy of (part of) the graph, ordered by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub nodes: usize,
    pub edges: usize,
    pub vectors: usize,
    pub records: usize,
    pub aliases: usize,
    pub communities_stale: bool,
}

pub struct Store {
    state: State,
    log: Option<LogFile>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("path", &self.path())
            .field("stats", &self.stats())
            .finish()
    }
}

impl Store {
    pub fn open(path: impl AsRef<Path>, create_if_missing: bool) -> Result<Store> {
        Store::open_with(path, OpenOptions { create_if_missing, ..OpenOptions::default() })
    }

    pub fn open_with(path: impl AsRef<Path>, opts: OpenOptions) -> Result<Store> {
        let path = path.as_ref();
        if !path.exists() {
            if !opts.create_if_missing {
                return Err(StoreError::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("{} does not exist", path.display()),
                )));
            }
            let mut store = Store::in_memory(opts.dimension);
            let log = LogFile::create(path, opts.dimension as u32, &store.state.dump())?;
            store.log = Some(log);
            return Ok(store);
        }
        let (log, decoded) = LogFile::open(path)?;
        let mut store = Store::replay(decoded)?;
        store.log = Some(log);
        Ok(store)
    }

    /// Reads a store file image into a detached in-memory store. A torn
    /// tail is ignored, as on open.
    pub fn from_image(bytes: &[u8]) -> Result<Store> {
        Store::replay(log::decode(bytes)?)
    }

    fn replay(decoded: log::Decoded) -> Result<Store> {
        let mut state = State::new(decoded.dimension as usize);
        for frame in decoded.frames {
            for m in frame {
                state.apply(m);
            }
        }
        let store = Store { state, log: None };
        store.check_consistency()?;
        Ok(store)
    }

    /// A store with no backing file. Holds the User root like any new store.
    pub fn in_memory(dimension: usize) -> Store {
        let mut state = State::new(dimension);
        state.apply(Mutation::PutNode { node: Box::new(Node::user_root()) });
        Store { state, log: None }
    }

    /// Detached in-memory copy of the current committed state.
    pub fn clone_in_memory(&self) -> Store {
        Store { state: self.state.clone(), log: None }
    }

    fn check_consistency(&self) -> Result<()> {
        let users = self.state.nodes.values().filter(|n| n.label == Label::User).count();
        if users != 1 {
            return Err(StoreError::Corrupt(format!("expected one User root, found {users}")));
        }
        for e in self.state.edges.values() {
            for end in [e.src, e.dst] {
                if !self.state.nodes.contains_key(&end) {
                    return Err(StoreError::Corrupt(format!("edge {} dangles at {end}", e.id)));
                }
            }
        }
        for n in self.state.nodes.values() {
            if n.has_vector != self.state.vectors.contains(n.id) {
                return Err(StoreError::Corrupt(format!("vector flag mismatch on {}", n.id)));
            }
        }
        if self.state.vectors.len() != self.state.nodes.values().filter(|n| n.has_vector).count() {
            return Err(StoreError::Corrupt("vector without node".into()));
        }
        Ok(())
    }

    pub fn path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path())
    }

    pub fn dimension(&self) -> usize {
        self.state.vectors.dimension()
    }

    pub fn user_id(&self) -> NodeId {
        NodeId::user_root()
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            nodes: self.state.nodes.len(),
            edges: self.state.edges.len(),
            vectors: self.state.vectors.len(),
            records: self.state.records.len(),
            aliases: self.state.aliases.len(),
            communities_stale: self.state.communities.stale,
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.state.nodes.get(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.state.nodes.contains_key(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.state.nodes.values()
    }

    pub fn edge(&self, id: EdgeId) -> Option<&Edge> {
        self.state.edges.get(&id)
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.state.edges.values()
    }

    pub fn vector(&self, id: NodeId) -> Option<&[f32]> {
        self.state.vectors.get(id)
    }

    pub fn vector_ids(&self) -> Vec<NodeId> {
        self.state.vectors.ids()
    }

    pub fn vector_index(&self) -> &VectorIndex {
        &self.state.vectors
    }

    pub fn knn(&self, query: &[f32], k: usize, min_similarity: f64) -> Result<Vec<ScoredNode>, VectorError> {
        self.state.vectors.knn(query, k, min_similarity)
    }

    pub fn records(&self) -> impl Iterator<Item = &RecordEntry> {
        self.state.records.values()
    }

    pub fn has_record(&self, id: RecordId) -> bool {
        self.state.records.contains_key(&id)
    }

    pub fn aliases(&self) -> &BTreeMap<AliasKey, NodeId> {
        &self.state.aliases
    }

    pub fn alias(&self, label: Label, key: &str) -> Option<NodeId> {
        self.state.aliases.get(&AliasKey { label, key: key.to_string() }).copied()
    }

    pub fn communities(&self) -> &CommunityState {
        &self.state.communities
    }

    /// Ids of all edges touching `id`, ascending.
    pub fn incident_edges(&self, id: NodeId) -> Vec<EdgeId> {
        self.state.incident_edges(id).into_iter().collect()
    }

    /// Single-hop neighbourhood sorted by (predicate, neighbour id, edge id).
    pub fn neighbors(
        &self,
        id: NodeId,
        direction: Direction,
        predicates: Option<&BTreeSet<String>>,
    ) -> Result<Vec<(Edge, Node)>> {
        if !self.contains(id) {
            return Err(StoreError::UnknownNode(id));
        }
        let mut edge_ids: Vec<EdgeId> = Vec::new();
        if matches!(direction, Direction::Out | Direction::Both) {
            edge_ids.extend(self.state.out_edges.get(&id).into_iter().flatten());
        }
        if matches!(direction, Direction::In | Direction::Both) {
            edge_ids.extend(self.state.in_edges.get(&id).into_iter().flatten());
        }
        let mut out: Vec<(Edge, Node)> = Vec::with_capacity(edge_ids.len());
        let mut seen = BTreeSet::new();
        for eid in edge_ids {
            if !seen.insert(eid) {
                continue;
            }
            let edge = &self.state.edges[&eid];
            if predicates.is_some_and(|p| !p.contains(&edge.predicate)) {
                continue;
            }
            let other = if edge.src == id { edge.dst } else { edge.src };
            out.push((edge.clone(), self.state.nodes[&other].clone()));
        }
        out.sort_by(|(ea, na), (eb, nb)| {
            ea.predicate.cmp(&eb.predicate).then(na.id.cmp(&nb.id)).then(ea.id.cmp(&eb.id))
        });
        Ok(out)
    }

    /// Nodes whose label is in `labels` (all when `None`), plus the edges
    /// between them.
    pub fn export_graph(&self, labels: Option<&BTreeSet<Label>>) -> GraphSnapshot {
        let nodes: Vec<Node> = self
            .state
            .nodes
            .values()
            .filter(|n| labels.is_none_or(|l| l.contains(&n.label)))
            .cloned()
            .collect();
        let kept: BTreeSet<NodeId> = nodes.iter().map(|n| n.id).collect();
        let edges = self
            .state
            .edges
            .values()
            .filter(|e| kept.contains(&e.src) && kept.contains(&e.dst))
            .cloned()
            .collect();
        GraphSnapshot { nodes, edges }
    }

    /// Describes every place `id` is still referenced. Empty after a
    /// successful cascade deletion of `id`.
    pub fn references_to(&self, id: NodeId) -> Vec<String> {
        let mut refs = Vec::new();
        if self.state.nodes.contains_key(&id) {
            refs.push("nodes".to_string());
        }
        for e in self.state.edges.values() {
            if e.src == id || e.dst == id {
                refs.push(format!("edges:{}", e.id));
            }
        }
        if self.state.out_edges.contains_key(&id) || self.state.in_edges.contains_key(&id) {
            refs.push("adjacency".to_string());
        }
        if self.state.vectors.contains(id) {
            refs.push("vectors".to_string());
        }
        for (alias, target) in &self.state.aliases {
            if *target == id {
                refs.push(format!("aliases:{}", alias.key));
            }
        }
        for p in &self.state.communities.levels {
            if p.assignment.contains_key(&id) {
                refs.push(format!("communities:{}", p.level));
            }
        }
        refs
    }

    pub fn references_to_edge(&self, id: EdgeId) -> Vec<String> {
        let mut refs = Vec::new();
        if self.state.edges.contains_key(&id) {
            refs.push("edges".to_string());
        }
        let indexed = |ix: &BTreeMap<NodeId, BTreeSet<EdgeId>>| ix.values().any(|s| s.contains(&id));
        if indexed(&self.state.out_edges) || indexed(&self.state.in_edges) {
            refs.push("adjacency".to_string());
        }
        refs
    }

    pub fn transaction(&mut self) -> Txn<'_> {
        Txn { store: self, undo: Vec::new(), redo: Vec::new(), compact: false, done: false }
    }

    pub fn upsert_node(&mut self, node: Node) -> Result<NodeId> {
        let mut t = self.transaction();
        let id = t.upsert_node(node)?;
        t.commit()?;
        Ok(id)
    }

    pub fn upsert_edge(&mut self, edge: Edge) -> Result<EdgeId> {
        let mut t = self.transaction();
        let id = t.upsert_edge(edge)?;
        t.commit()?;
        Ok(id)
    }

    pub fn add_vector(&mut self, id: NodeId, vector: &[f32]) -> Result<()> {
        let mut t = self.transaction();
        t.add_vector(id, vector)?;
        t.commit()
    }

    pub fn delete_cascade(&mut self, root: NodeId) -> Result<DeletionReceipt> {
        let mut t = self.transaction();
        let receipt = t.delete_cascade(root)?;
        t.commit()?;
        Ok(receipt)
    }

    /// Rewrites the backing file as a single snapshot frame.
    pub fn compact(&mut self) -> Result<()> {
        let dim = self.dimension() as u32;
        let dump = self.state.dump();
        if let Some(log) = self.log.as_mut() {
            log.compact(dim, &dump)?;
        }
        Ok(())
    }

    pub fn file_len(&mut self) -> Option<u64> {
        self.log.as_mut().and_then(|l| l.len().ok())
    }

    /// True when nothing but the User root is present.
    pub fn is_pristine(&self) -> bool {
        self.state.nodes.len() == 1
            && self.state.edges.is_empty()
            && self.state.records.is_empty()
            && self.state.aliases.is_empty()
            && self.state.vectors.is_empty()
    }

    /// Raw, validated-by-caller rows used by portable import.
    pub(crate) fn load_rows(&mut self, rows: Vec<Mutation>) -> Result<()> {
        let mut t = self.transaction();
        for m in rows {
            t.stage(m);
        }
        t.compact = true;
        t.commit()?;
        self.check_consistency()
    }

    #[cfg(test)]
    pub(crate) fn dump_rows(&self) -> Vec<Mutation> {
        self.state.dump()
    }
}

/// A write transaction. Dropping it without [`Txn::commit`] rolls back.
pub struct Txn<'a> {
    store: &'a mut Store,
    undo: Vec<Mutation>,
    redo: Vec<Mutation>,
    compact: bool,
    done: bool,
}

impl Txn<'_> {
    /// Read view including this transaction's own writes.
    pub fn store(&self) -> &Store {
        self.store
    }

    fn stage(&mut self, m: Mutation) {
        let inverse = self.store.state.apply(m.clone());
        self.undo.push(inverse);
        self.redo.push(m);
    }

    pub fn upsert_node(&mut self, node: Node) -> Result<NodeId> {
        let label = node.label;
        if label != Label::User && node.canonical_key.trim().is_empty() {
            return Err(StoreError::EmptyKey(label));
        }
        if label == Label::User {
            return Err(StoreError::SecondUserRoot);
        }
        let id = NodeId::derive(label, &node.canonical_key);
        if node.provenance.is_empty() {
            return Err(StoreError::MissingProvenance(id));
        }
        if let (Some(s), Some(e)) = (node.valid_start, node.valid_end) {
            if s > e {
                return Err(StoreError::InvalidInterval(id));
            }
        }
        let merged = match self.store.state.nodes.get(&id) {
            Some(existing) => {
                let mut m = existing.clone();
                let mut changed = merge_properties(&mut m.properties, &node.properties);
                let before = m.provenance.len();
                m.provenance.extend(node.provenance.iter().copied());
                changed |= m.provenance.len() != before;
                if m.valid_start.is_none() && node.valid_start.is_some() {
                    m.valid_start = node.valid_start;
                    m.valid_end = node.valid_end.or(node.valid_start);
                    changed = true;
                }
                if !changed {
                    return Ok(id);
                }
                m
            }
            None => Node { id, has_vector: false, ..node },
        };
        self.stage(Mutation::PutNode { node: Box::new(merged) });
        Ok(id)
    }

    /// Replaces a node row verbatim (same id). Used when a merge rewrites
    /// display name or properties.
    pub fn replace_node(&mut self, node: Node) -> Result<()> {
        let existing = self.store.node(node.id).ok_or(StoreError::UnknownNode(node.id))?;
        let node = Node { has_vector: existing.has_vector, ..node };
        self.stage(Mutation::PutNode { node: Box::new(node) });
        Ok(())
    }

    pub fn upsert_edge(&mut self, edge: Edge) -> Result<EdgeId> {
        if !is_snake_case(&edge.predicate) {
            return Err(StoreError::InvalidPredicate(edge.predicate));
        }
        for end in [edge.src, edge.dst] {
            if !self.store.contains(end) {
                return Err(StoreError::DanglingEndpoint(end));
            }
        }
        let id = EdgeId::derive(edge.src, &edge.predicate, edge.dst);
        let merged = match self.store.state.edges.get(&id) {
            Some(existing) => {
                let mut m = existing.clone();
                let mut changed = merge_properties(&mut m.properties, &edge.properties);
                let before = m.provenance.len();
                m.provenance.extend(edge.provenance.iter().copied());
                changed |= m.provenance.len() != before;
                if !changed {
                    return Ok(id);
                }
                m
            }
            None => Edge { id, ..edge },
        };
        self.stage(Mutation::PutEdge { edge: Box::new(merged) });
        Ok(id)
    }

    pub fn remove_edge(&mut self, id: EdgeId) -> Option<Edge> {
        let edge = self.store.edge(id)?.clone();
        self.stage(Mutation::DeleteEdge { id });
        Some(edge)
    }

    pub fn add_vector(&mut self, id: NodeId, vector: &[f32]) -> Result<()> {
        if !self.store.contains(id) {
            return Err(StoreError::UnknownNode(id));
        }
        self.store.state.vectors.check(id, vector)?;
        self.stage(Mutation::PutVector { id, vector: vector.to_vec() });
        Ok(())
    }

    pub fn remove_vector(&mut self, id: NodeId) -> bool {
        if !self.store.state.vectors.contains(id) {
            return false;
        }
        self.stage(Mutation::DeleteVector { id });
        true
    }

    pub fn put_record(&mut self, record: RecordEntry) {
        self.stage(Mutation::PutRecord { record });
    }

    pub fn put_alias(&mut self, label: Label, key: &str, target: NodeId) -> Result<()> {
        if !self.store.contains(target) {
            return Err(StoreError::UnknownNode(target));
        }
        let alias = AliasKey { label, key: key.to_string() };
        if self.store.state.aliases.get(&alias) != Some(&target) {
            self.stage(Mutation::PutAlias { alias, target });
        }
        Ok(())
    }

    pub fn set_communities(&mut self, state: CommunityState) {
        self.stage(Mutation::SetCommunities { state: Box::new(state) });
    }

    pub fn mark_communities_stale(&mut self) {
        if !self.store.state.communities.stale {
            let mut c = self.store.state.communities.clone();
            c.stale = true;
            self.set_communities(c);
        }
    }

    /// Removes a node that has no incident edges, with its vector and the
    /// aliases pointing at it.
    pub fn remove_isolated_node(&mut self, id: NodeId) -> Result<Node> {
        let node = self.store.node(id).cloned().ok_or(StoreError::UnknownNode(id))?;
        if node.label == Label::User {
            return Err(StoreError::CannotDeleteRoot);
        }
        if !self.store.state.incident_edges(id).is_empty() {
            return Err(StoreError::NodeHasEdges(id));
        }
        self.remove_vector(id);
        let aliases: Vec<AliasKey> = self
            .store
            .state
            .aliases
            .iter()
            .filter(|(_, t)| **t == id)
            .map(|(a, _)| a.clone())
            .collect();
        for alias in aliases {
            self.stage(Mutation::DeleteAlias { alias });
        }
        self.forget_in_communities(&[id]);
        self.stage(Mutation::DeleteNode { id });
        Ok(node)
    }

    fn forget_in_communities(&mut self, ids: &[NodeId]) {
        let current = &self.store.state.communities;
        let touched = current.levels.iter().any(|p| ids.iter().any(|i| p.assignment.contains_key(i)));
        if !touched && current.stale {
            return;
        }
        let mut c = current.clone();
        for p in &mut c.levels {
            for i in ids {
                p.assignment.remove(i);
            }
        }
        c.stale = true;
        self.set_communities(c);
    }

    /// Removes `root`, its incident edges, its vector, aliases and community
    /// assignments that point at it, and the ledger rows of records that
    /// either produced `root` as their head or no longer back any node or
    /// edge. Neighbours survive.
    pub fn delete_cascade(&mut self, root: NodeId) -> Result<DeletionReceipt> {
        let node = self.store.node(root).cloned().ok_or(StoreError::UnknownNode(root))?;
        if node.label == Label::User {
            return Err(StoreError::CannotDeleteRoot);
        }
        let mut touched_records: BTreeSet<RecordId> = node.provenance.clone();
        let edge_ids: Vec<EdgeId> = self.store.state.incident_edges(root).into_iter().collect();
        for eid in &edge_ids {
            if let Some(e) = self.remove_edge(*eid) {
                touched_records.extend(e.provenance);
            }
        }
        let had_vector = self.store.state.vectors.contains(root);
        self.remove_isolated_node(root)?;

        let mut removed_records = Vec::new();
        for rid in touched_records {
            let headed_here = self.store.state.records.get(&rid).is_some_and(|r| r.head == Some(root));
            let still_used = self.store.state.nodes.values().any(|n| n.provenance.contains(&rid))
                || self.store.state.edges.values().any(|e| e.provenance.contains(&rid));
            if (headed_here || !still_used) && self.store.has_record(rid) {
                self.stage(Mutation::DeleteRecord { id: rid });
                removed_records.push(rid);
            }
        }
        self.compact = true;
        Ok(DeletionReceipt {
            root,
            deleted_nodes: vec![root],
            deleted_edges: edge_ids,
            removed_vectors: if had_vector { vec![root] } else { Vec::new() },
            removed_records,
            executed_at: Timestamp::now(),
        })
    }

    /// Makes the transaction durable. On I/O failure the in-memory state is
    /// rolled back and the error returned.
    pub fn commit(mut self) -> Result<()> {
        self.done = true;
        if self.redo.is_empty() {
            return Ok(());
        }
        let dim = self.store.dimension() as u32;
        let result = if self.compact {
            let dump = self.store.state.dump();
            match self.store.log.as_mut() {
                Some(log) => log.compact(dim, &dump),
                None => Ok(()),
            }
        } else {
            match self.store.log.as_mut() {
                Some(log) => self::log::encode_frame(&self.redo).and_then(|f| log.append(&f)),
                None => Ok(()),
            }
        };
        if result.is_err() {
            self.rollback();
        }
        result
    }

    fn rollback(&mut self) {
        while let Some(m) = self.undo.pop() {
            self.store.state.apply(m);
        }
        self.redo.clear();
    }
}

impl Drop for Txn<'_> {
    fn drop(&mut self) {
        if !self.done {
            self.rollback();
        }
    }
}

/// Merges `incoming` into `existing`. A conflicting value is kept under
/// `key#2`, `key#3`, ...; values already present anywhere in that chain are
/// not duplicated. Returns whether anything changed.
pub fn merge_properties(existing: &mut Properties, incoming: &Properties) -> bool {
    let mut changed = false;
    for (k, v) in incoming {
        match existing.get(k) {
            None => {
                existing.insert(k.clone(), v.clone());
                changed = true;
            }
            Some(e) if e == v => {}
            Some(_) => {
                let mut n = 2;
                loop {
                    let slot = format!("{k}#{n}");
                    match existing.get(&slot) {
                        None => {
                            existing.insert(slot, v.clone());
                            changed = true;
                            break;
                        }
                        Some(e) if e == v => break,
                        Some(_) => n += 1,
                    }
                }
            }
        }
    }
    changed
}

pub fn default_store_path() -> PathBuf {
    PathBuf::from("ruva.rpkg")
}
