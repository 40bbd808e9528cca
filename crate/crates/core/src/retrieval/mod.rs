//! Read path: anchor search, N-hop expansion, serialization, answering.
//!
//! Expansion walks edges in both directions. The User root is admitted like
//! any other node but never expanded: it touches every record head, so
//! walking through it would pull the whole store into every two-hop answer.

mod structured;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use self::structured::StructuredGenerator;
use crate::model::{Edge, EdgeId, Label, Node, NodeId};
use crate::store::Store;
use crate::vector::{embed_text, EmbedError, Embedder, ScoredNode};

/// Returned verbatim whenever the evidence does not support an answer.
pub const REFUSAL: &str = "I couldn't find relevant information to answer your question.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k_anchors: usize,
    pub n_hops: u32,
    pub max_nodes: usize,
    pub min_similarity: f64,
    /// Append nodes sharing a level-0 community with an anchor. Only used
    /// when the stored assignment is fresh.
    pub include_communities: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { k_anchors: 5, n_hops: 2, max_nodes: 64, min_similarity: 0.2, include_communities: false }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("unknown anchor {0}")]
    UnknownAnchor(NodeId),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("generator failed: {0}")]
    Generator(String),
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k_anchors == 0 || self.max_nodes == 0 {
            return Err(RetrievalError::InvalidConfig("k_anchors and max_nodes must be positive".into()));
        }
        if self.max_nodes < self.k_anchors {
            return Err(RetrievalError::InvalidConfig("max_nodes must be at least k_anchors".into()));
        }
        if !self.min_similarity.is_finite() {
            return Err(RetrievalError::InvalidConfig("min_similarity must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedNode {
    #[serde(flatten)]
    pub node: Node,
    pub hop: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSubgraph {
    pub anchors: Vec<ScoredNode>,
    /// Sorted by (hop, id).
    pub nodes: Vec<RetrievedNode>,
    /// Sorted by (predicate, src, dst).
    pub edges: Vec<Edge>,
    pub context: String,
    pub truncated: bool,
}

impl RetrievedSubgraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&RetrievedNode> {
        self.nodes.iter().find(|n| n.node.id == id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.node(id).is_some()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.iter().map(|n| n.node.id).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Model,
    Structured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub citations: Vec<NodeId>,
    pub refused: bool,
    pub engine: Engine,
}

impl Answer {
    pub fn refusal(engine: Engine) -> Self {
        Answer { text: REFUSAL.to_string(), citations: Vec::new(), refused: true, engine }
    }
}

/// Produces an answer from the serialized evidence.
pub trait Generator: Send + Sync {
    fn engine(&self) -> Engine;

    fn generate(&self, question: &str, subgraph: &RetrievedSubgraph) -> Result<Answer, RetrievalError>;
}

/// Sends `{"context", "question"}` somewhere and gets prose back.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, context: &str, question: &str) -> Result<String, String>;
}

/// Generator backed by an external model. Cites every retrieved node.
pub struct ModelGenerator<C> {
    pub client: C,
}

impl<C: CompletionClient> Generator for ModelGenerator<C> {
    fn engine(&self) -> Engine {
        Engine::Model
    }

    fn generate(&self, question: &str, subgraph: &RetrievedSubgraph) -> Result<Answer, RetrievalError> {
        let text = self.client.complete(&subgraph.context, question).map_err(RetrievalError::Generator)?;
        if text.trim() == REFUSAL || text.trim().is_empty() {
            return Ok(Answer::refusal(Engine::Model));
        }
        Ok(Answer { text, citations: subgraph.node_ids(), refused: false, engine: Engine::Model })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub anchor_ms: f64,
    pub expand_ms: f64,
    pub serialize_ms: f64,
    /// anchor + expand + serialize.
    pub retrieval_ms: f64,
    pub generation_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub answer: Answer,
    pub subgraph: RetrievedSubgraph,
    pub timings: Timings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Embeds `query` and returns the `k_anchors` nearest nodes above
/// `min_similarity`.
pub fn anchor_search(
    store: &Store,
    embedder: &dyn Embedder,
    query: &str,
    cfg: &RetrievalConfig,
) -> Result<Vec<ScoredNode>, RetrievalError> {
    cfg.validate()?;
    if query.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    if store.vector_index().is_empty() {
        return Ok(Vec::new());
    }
    let q = embed_text(query, embedder)?;
    store
        .knn(&q, cfg.k_anchors, cfg.min_similarity)
        .map_err(|e| RetrievalError::Embed(EmbedError::Provider(e.to_string())))
}

/// Breadth-first expansion from all anchors at once, both directions, up
/// to `n_hops`. When more than `max_nodes` nodes qualify, the kept ones are
/// those with the lower hop, then the higher anchor score, then the smaller
/// id.
pub fn expand(store: &Store, anchors: &[ScoredNode], cfg: &RetrievalConfig) -> Result<RetrievedSubgraph, RetrievalError> {
    let mut g = expand_unserialized(store, anchors, cfg)?;
    g.context = serialize_subgraph(&g);
    Ok(g)
}

fn expand_unserialized(
    store: &Store,
    anchors: &[ScoredNode],
    cfg: &RetrievalConfig,
) -> Result<RetrievedSubgraph, RetrievalError> {
    cfg.validate()?;
    let root = store.user_id();
    // id -> (hop, best anchor score reaching it at that hop)
    let mut seen: BTreeMap<NodeId, (u32, f64)> = BTreeMap::new();
    let mut frontier: Vec<NodeId> = Vec::new();
    for a in anchors {
        if !store.contains(a.id) {
            return Err(RetrievalError::UnknownAnchor(a.id));
        }
        let e = seen.entry(a.id).or_insert((0, a.score));
        e.1 = e.1.max(a.score);
    }
    frontier.extend(seen.keys().copied());

    for hop in 1..=cfg.n_hops {
        let mut next: BTreeMap<NodeId, f64> = BTreeMap::new();
        for &id in &frontier {
            if id == root {
                continue;
            }
            let score = seen[&id].1;
            for eid in store.incident_edges(id) {
                let Some(e) = store.edge(eid) else { continue };
                let other = if e.src == id { e.dst } else { e.src };
                if seen.contains_key(&other) {
                    continue;
                }
                let s = next.entry(other).or_insert(score);
                *s = s.max(score);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next.keys().copied().collect();
        for (id, s) in next {
            seen.insert(id, (hop, s));
        }
    }

    let mut ranked: Vec<(NodeId, u32, f64)> = seen.into_iter().map(|(id, (h, s))| (id, h, s)).collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    let truncated = ranked.len() > cfg.max_nodes;
    ranked.truncate(cfg.max_nodes);

    if cfg.include_communities && ranked.len() < cfg.max_nodes && !store.communities().stale {
        let c = store.communities();
        let wanted: BTreeSet<u32> = anchors.iter().filter_map(|a| c.community_of(0, a.id)).collect();
        let have: BTreeSet<NodeId> = ranked.iter().map(|r| r.0).collect();
        if let Some(level) = c.levels.first() {
            for (id, comm) in &level.assignment {
                if ranked.len() >= cfg.max_nodes {
                    break;
                }
                if wanted.contains(comm) && !have.contains(id) && *id != root && store.contains(*id) {
                    ranked.push((*id, cfg.n_hops + 1, 0.0));
                }
            }
        }
    }

    let kept: BTreeSet<NodeId> = ranked.iter().map(|r| r.0).collect();
    let mut nodes: Vec<RetrievedNode> = ranked
        .iter()
        .filter_map(|(id, hop, _)| store.node(*id).map(|n| RetrievedNode { node: n.clone(), hop: *hop }))
        .collect();
    nodes.sort_by(|a, b| a.hop.cmp(&b.hop).then(a.node.id.cmp(&b.node.id)));

    let mut edge_ids: BTreeSet<EdgeId> = BTreeSet::new();
    for &id in &kept {
        if id == root {
            continue;
        }
        for eid in store.incident_edges(id) {
            if let Some(e) = store.edge(eid) {
                if kept.contains(&e.src) && kept.contains(&e.dst) {
                    edge_ids.insert(eid);
                }
            }
        }
    }
    let mut edges: Vec<Edge> = edge_ids.into_iter().filter_map(|id| store.edge(id).cloned()).collect();
    edges.sort_by(|a, b| a.predicate.cmp(&b.predicate).then(a.src.cmp(&b.src)).then(a.dst.cmp(&b.dst)));

    let anchors: Vec<ScoredNode> = anchors.iter().filter(|a| kept.contains(&a.id)).copied().collect();
    Ok(RetrievedSubgraph { anchors, nodes, edges, context: String::new(), truncated })
}

fn quoted(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn flat(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// Deterministic text form of a subgraph:
///
/// ```text
/// NODE Receipt "Train ticket" {amount=95 EUR, amount_currency=EUR} [t=2025-03-15T10:00:00.000Z/2025-03-15T10:00:00.000Z]
/// EDGE "Train ticket" -during-> "Weekend Trip"
/// ```
///
/// Nodes in (hop, id) order, edges in (predicate, src, dst) order.
pub fn serialize_subgraph(g: &RetrievedSubgraph) -> String {
    let mut nodes: Vec<&RetrievedNode> = g.nodes.iter().collect();
    nodes.sort_by(|a, b| a.hop.cmp(&b.hop).then(a.node.id.cmp(&b.node.id)));
    let names: BTreeMap<NodeId, &str> = g.nodes.iter().map(|n| (n.node.id, n.node.display_name.as_str())).collect();
    let mut out = String::new();
    for rn in nodes {
        let n = &rn.node;
        let props: Vec<String> = n.properties.iter().map(|(k, v)| format!("{k}={}", flat(&v.to_string()))).collect();
        let _ = write!(out, "NODE {} {} {{{}}}", n.label, quoted(&n.display_name), props.join(", "));
        if let Some(t) = n.time_interval() {
            let _ = write!(out, " [t={t}]");
        }
        out.push('\n');
    }
    let mut edges: Vec<&Edge> = g.edges.iter().collect();
    edges.sort_by(|a, b| a.predicate.cmp(&b.predicate).then(a.src.cmp(&b.src)).then(a.dst.cmp(&b.dst)));
    for e in edges {
        let name = |id: NodeId| names.get(&id).copied().unwrap_or("?");
        let _ = writeln!(out, "EDGE {} -{}-> {}", quoted(name(e.src)), e.predicate, quoted(name(e.dst)));
    }
    out
}

/// Anchor search, expansion, serialization, then generation. An empty
/// subgraph is refused without calling the generator.
pub fn answer_query(
    store: &Store,
    embedder: &dyn Embedder,
    question: &str,
    cfg: &RetrievalConfig,
    generator: &dyn Generator,
) -> Result<QueryOutcome, RetrievalError> {
    let (subgraph, mut timings) = retrieve(store, embedder, question, cfg)?;
    let t = Instant::now();
    let answer = if subgraph.is_empty() {
        Answer::refusal(generator.engine())
    } else {
        let mut a = generator.generate(question, &subgraph)?;
        if a.refused || a.citations.iter().any(|c| !subgraph.contains(*c)) || a.citations.is_empty() {
            a = Answer::refusal(a.engine);
        }
        a
    };
    timings.generation_ms = ms(t);
    Ok(QueryOutcome { answer, subgraph, timings })
}

/// Retrieval half of [`answer_query`], timed per phase.
pub fn retrieve(
    store: &Store,
    embedder: &dyn Embedder,
    question: &str,
    cfg: &RetrievalConfig,
) -> Result<(RetrievedSubgraph, Timings), RetrievalError> {
    let mut timings = Timings::default();
    let t0 = Instant::now();
    let anchors = anchor_search(store, embedder, question, cfg)?;
    timings.anchor_ms = ms(t0);
    let t1 = Instant::now();
    let mut g = expand_unserialized(store, &anchors, cfg)?;
    timings.expand_ms = ms(t1);
    let t2 = Instant::now();
    g.context = serialize_subgraph(&g);
    timings.serialize_ms = ms(t2);
    timings.retrieval_ms = ms(t0);
    Ok((g, timings))
}

pub(crate) fn is_root(n: &Node) -> bool {
    n.label == Label::User
}

#[cfg(test)]
mod tests;
