use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::community::CommunityState;
use crate::extract::Modality;
use crate::model::{Edge, EdgeId, Label, Node, NodeId, RecordId, Timestamp};
use crate::vector::VectorIndex;

/// One row of the ingested-record ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub id: RecordId,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    /// Head node the record produced. Deleting it drops this row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<NodeId>,
    pub committed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AliasKey {
    pub label: Label,
    pub key: String,
}

/// A single row-level change. Applying one yields its inverse, which is how
/// transactions roll back and how the log replays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub(crate) enum Mutation {
    PutNode { node: Box<Node> },
    DeleteNode { id: NodeId },
    PutEdge { edge: Box<Edge> },
    DeleteEdge { id: EdgeId },
    PutVector { id: NodeId, vector: Vec<f32> },
    DeleteVector { id: NodeId },
    PutRecord { record: RecordEntry },
    DeleteRecord { id: RecordId },
    PutAlias { alias: AliasKey, target: NodeId },
    DeleteAlias { alias: AliasKey },
    SetCommunities { state: Box<CommunityState> },
    Noop,
}

#[derive(Debug, Clone)]
pub(crate) struct State {
    pub nodes: BTreeMap<NodeId, Node>,
    pub edges: BTreeMap<EdgeId, Edge>,
    pub out_edges: BTreeMap<NodeId, BTreeSet<EdgeId>>,
    pub in_edges: BTreeMap<NodeId, BTreeSet<EdgeId>>,
    pub vectors: VectorIndex,
    pub records: BTreeMap<RecordId, RecordEntry>,
    pub aliases: BTreeMap<AliasKey, NodeId>,
    pub communities: CommunityState,
}

impl State {
    pub fn new(dimension: usize) -> Self {
        State {
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            out_edges: BTreeMap::new(),
            in_edges: BTreeMap::new(),
            vectors: VectorIndex::new(dimension),
            records: BTreeMap::new(),
            aliases: BTreeMap::new(),
            communities: CommunityState::default(),
        }
    }

    /// Applies `m` and returns the mutation that undoes it.
    pub fn apply(&mut self, m: Mutation) -> Mutation {
        match m {
            Mutation::PutNode { node } => {
                let id = node.id;
                match self.nodes.insert(id, *node) {
                    Some(old) => Mutation::PutNode { node: Box::new(old) },
                    None => Mutation::DeleteNode { id },
                }
            }
            Mutation::DeleteNode { id } => match self.nodes.remove(&id) {
                Some(old) => Mutation::PutNode { node: Box::new(old) },
                None => Mutation::Noop,
            },
            Mutation::PutEdge { edge } => {
                let id = edge.id;
                self.out_edges.entry(edge.src).or_default().insert(id);
                self.in_edges.entry(edge.dst).or_default().insert(id);
                match self.edges.insert(id, *edge) {
                    Some(old) => Mutation::PutEdge { edge: Box::new(old) },
                    None => Mutation::DeleteEdge { id },
                }
            }
            Mutation::DeleteEdge { id } => match self.edges.remove(&id) {
                Some(old) => {
                    detach(&mut self.out_edges, old.src, id);
                    detach(&mut self.in_edges, old.dst, id);
                    Mutation::PutEdge { edge: Box::new(old) }
                }
                None => Mutation::Noop,
            },
            Mutation::PutVector { id, vector } => {
                let previous = self.vectors.remove(id);
                // Callers validate before staging; a failure here means a
                // corrupted log, which replay surfaces through has_vector.
                let added = self.vectors.add(id, &vector).is_ok();
                if let Some(n) = self.nodes.get_mut(&id) {
                    n.has_vector = added;
                }
                match previous {
                    Some(old) => Mutation::PutVector { id, vector: old },
                    None => Mutation::DeleteVector { id },
                }
            }
            Mutation::DeleteVector { id } => match self.vectors.remove(id) {
                Some(old) => {
                    if let Some(n) = self.nodes.get_mut(&id) {
                        n.has_vector = false;
                    }
                    Mutation::PutVector { id, vector: old }
                }
                None => Mutation::Noop,
            },
            Mutation::PutRecord { record } => {
                let id = record.id;
                match self.records.insert(id, record) {
                    Some(old) => Mutation::PutRecord { record: old },
                    None => Mutation::DeleteRecord { id },
                }
            }
            Mutation::DeleteRecord { id } => match self.records.remove(&id) {
                Some(old) => Mutation::PutRecord { record: old },
                None => Mutation::Noop,
            },
            Mutation::PutAlias { alias, target } => match self.aliases.insert(alias.clone(), target) {
                Some(old) => Mutation::PutAlias { alias, target: old },
                None => Mutation::DeleteAlias { alias },
            },
            Mutation::DeleteAlias { alias } => match self.aliases.remove(&alias) {
                Some(old) => Mutation::PutAlias { alias, target: old },
                None => Mutation::Noop,
            },
            Mutation::SetCommunities { state } => {
                let old = std::mem::replace(&mut self.communities, *state);
                Mutation::SetCommunities { state: Box::new(old) }
            }
            Mutation::Noop => Mutation::Noop,
        }
    }

    /// Every row as a list of puts, in a canonical order.
    pub fn dump(&self) -> Vec<Mutation> {
        let mut out = Vec::new();
        for node in self.nodes.values() {
            let mut node = node.clone();
            node.has_vector = false;
            out.push(Mutation::PutNode { node: Box::new(node) });
        }
        for edge in self.edges.values() {
            out.push(Mutation::PutEdge { edge: Box::new(edge.clone()) });
        }
        for id in self.vectors.ids() {
            let vector = self.vectors.get(id).expect("listed id").to_vec();
            out.push(Mutation::PutVector { id, vector });
        }
        for record in self.records.values() {
            out.push(Mutation::PutRecord { record: record.clone() });
        }
        for (alias, target) in &self.aliases {
            out.push(Mutation::PutAlias { alias: alias.clone(), target: *target });
        }
        out.push(Mutation::SetCommunities { state: Box::new(self.communities.clone()) });
        out
    }

    pub fn incident_edges(&self, id: NodeId) -> BTreeSet<EdgeId> {
        let mut out = BTreeSet::new();
        if let Some(s) = self.out_edges.get(&id) {
            out.extend(s.iter().copied());
        }
        if let Some(s) = self.in_edges.get(&id) {
            out.extend(s.iter().copied());
        }
        out
    }
}

fn detach(index: &mut BTreeMap<NodeId, BTreeSet<EdgeId>>, node: NodeId, edge: EdgeId) {
    if let Some(set) = index.get_mut(&node) {
        set.remove(&edge);
        if set.is_empty() {
            index.remove(&node);
        }
    }
}
