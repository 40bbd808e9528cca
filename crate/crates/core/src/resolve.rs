//! Entity resolution: does a mention denote an existing node?
//!
//! Rules run in a fixed order and the first one with a candidate decides:
//!
//! 1. `exact_key`: a live node or alias with the same label and key.
//! 2. `initial_expansion` (Person and Contact only): same token count and
//!    final token, every other token equal or an initial of its partner.
//! 3. `embedding_match`: cosine of the surface embedding to a same-label
//!    node's vector at least `tau`, corroborated by the graph: the candidate
//!    is adjacent to the record head or shares a non-root neighbour with it,
//!    or (with `community_gate`) sits in the head's level-0 community. Stale
//!    community assignments are ignored.
//!
//! Several candidates under one rule resolve to the oldest `created_at`,
//! then the smallest id.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::extract::Mention;
use crate::model::{Edge, Label, Node, NodeId};
use crate::store::{merge_properties, Direction, Store, StoreError, Txn};
use crate::vector::{embed_text, EmbedError, Embedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    ExactKey,
    InitialExpansion,
    EmbeddingMatch,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "node")]
pub enum Outcome {
    Merged(NodeId),
    Created(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionDecision {
    pub mention: Mention,
    pub outcome: Outcome,
    pub rule_fired: Rule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolverConfig {
    pub tau: f64,
    /// Also accept a shared level-0 community as corroboration.
    pub community_gate: bool,
    /// Nearest neighbours inspected by the embedding rule.
    pub candidates: usize,
}

impl Default for ResolverConfig {
    fn default() -> Self {
        ResolverConfig { tau: 0.90, community_gate: true, candidates: 16 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MergeError {
    #[error("cannot merge {0} with itself")]
    SelfMerge(NodeId),
    #[error("cannot merge a {survivor} into a {victim}")]
    LabelMismatch { survivor: Label, victim: Label },
    #[error("the User root cannot be merged")]
    Root,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

fn is_initial(short: &str, full: &str) -> bool {
    let s = short.strip_suffix('.').unwrap_or(short);
    let mut chars = s.chars();
    match (chars.next(), chars.next(), full.chars().next()) {
        (Some(c), None, Some(f)) => c == f && c.is_alphabetic(),
        _ => false,
    }
}

/// Initial-expansion compatibility of two canonical keys. Symmetric.
pub fn initials_compatible(a: &str, b: &str) -> bool {
    let ta: Vec<&str> = a.split_whitespace().collect();
    let tb: Vec<&str> = b.split_whitespace().collect();
    if ta.len() < 2 || ta.len() != tb.len() || ta.last() != tb.last() {
        return false;
    }
    ta.iter().zip(&tb).all(|(x, y)| x == y || is_initial(x, y) || is_initial(y, x))
}

/// Whether surface `a` carries more information than `b`: longer key, then
/// lexicographically smaller. A total order, so merge direction does not
/// depend on arrival order.
pub fn fuller(a: &str, b: &str) -> bool {
    let (la, lb) = (a.chars().count(), b.chars().count());
    la > lb || (la == lb && a < b)
}

/// Key the head node of a record is stored under: two records with the same
/// title stay distinct.
pub fn head_key(mention_key: &str, record: &crate::model::RecordId) -> String {
    format!("{mention_key} #{}", &record.to_hex()[..12])
}

fn is_head_key(key: &str) -> bool {
    key.rsplit_once(" #").is_some_and(|(_, h)| h.len() == 12 && h.chars().all(|c| c.is_ascii_hexdigit()))
}

fn pick(store: &Store, mut ids: Vec<NodeId>) -> Option<NodeId> {
    ids.sort();
    ids.dedup();
    ids.into_iter()
        .filter_map(|id| store.node(id))
        .min_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)))
        .map(|n| n.id)
}

fn neighbour_set(store: &Store, id: NodeId) -> BTreeSet<NodeId> {
    store
        .neighbors(id, Direction::Both, None)
        .map(|v| v.into_iter().map(|(_, n)| n.id).collect())
        .unwrap_or_default()
}

fn corroborated(store: &Store, candidate: NodeId, head: Option<NodeId>, cfg: &ResolverConfig) -> bool {
    let Some(head) = head else { return false };
    if !store.contains(head) {
        return false;
    }
    let root = store.user_id();
    let mut hn = neighbour_set(store, head);
    hn.remove(&root);
    if hn.contains(&candidate) {
        return true;
    }
    let cn = neighbour_set(store, candidate);
    if cn.iter().any(|n| hn.contains(n)) {
        return true;
    }
    if cfg.community_gate && !store.communities().stale {
        let c = store.communities();
        if let (Some(a), Some(b)) = (c.community_of(0, head), c.community_of(0, candidate)) {
            return a == b;
        }
    }
    false
}

/// Resolves `m` against the current state. `head` is the node of the record
/// the mention came from, used for structural corroboration.
pub fn resolve(
    store: &Store,
    m: &Mention,
    head: Option<NodeId>,
    embedder: &dyn Embedder,
    cfg: &ResolverConfig,
) -> Result<ResolutionDecision, EmbedError> {
    let label = m.type_hint;
    let decide = |outcome, rule_fired, score| ResolutionDecision { mention: m.clone(), outcome, rule_fired, score };

    let direct = NodeId::derive(label, &m.key);
    if store.contains(direct) {
        return Ok(decide(Outcome::Merged(direct), Rule::ExactKey, None));
    }
    if let Some(target) = store.alias(label, &m.key) {
        return Ok(decide(Outcome::Merged(target), Rule::ExactKey, None));
    }

    if label.is_personal_name() {
        let hits: Vec<NodeId> = store
            .nodes()
            .filter(|n| n.label == label && initials_compatible(&m.key, &n.canonical_key))
            .map(|n| n.id)
            .collect();
        if let Some(winner) = pick(store, hits) {
            return Ok(decide(Outcome::Merged(winner), Rule::InitialExpansion, None));
        }
    }

    if !store.vector_index().is_empty() && !m.surface.trim().is_empty() {
        let q = embed_text(&m.surface, embedder)?;
        if q.len() == store.dimension() {
            let hits = store.knn(&q, cfg.candidates.max(1), cfg.tau).unwrap_or_default();
            let eligible: Vec<(NodeId, f64)> = hits
                .into_iter()
                .filter(|h| store.node(h.id).is_some_and(|n| n.label == label))
                .filter(|h| corroborated(store, h.id, head, cfg))
                .map(|h| (h.id, h.score))
                .collect();
            if let Some(winner) = pick(store, eligible.iter().map(|(id, _)| *id).collect()) {
                let score = eligible.iter().find(|(id, _)| *id == winner).map(|(_, s)| *s);
                return Ok(decide(Outcome::Merged(winner), Rule::EmbeddingMatch, score));
            }
        }
    }
    Ok(decide(Outcome::Created(direct), Rule::None, None))
}

/// Text a node is embedded from: its display name followed by its textual
/// property values in key order.
pub fn embedding_text(node: &Node) -> String {
    let mut parts = vec![node.display_name.clone()];
    for (k, v) in &node.properties {
        if let Some(t) = v.as_text() {
            if k != "amount_currency" && !t.trim().is_empty() && t != node.display_name {
                parts.push(t.to_string());
            }
        }
    }
    let text = parts.join(". ");
    text.chars().take(2000).collect()
}

/// Replaces a node's vector with one embedded from [`embedding_text`].
pub fn reembed(txn: &mut Txn<'_>, id: NodeId, embedder: &dyn Embedder) -> Result<(), MergeError> {
    let node = txn.store().node(id).cloned().ok_or(StoreError::UnknownNode(id))?;
    let v = embed_text(&embedding_text(&node), embedder)?;
    txn.remove_vector(id);
    txn.add_vector(id, &v)?;
    Ok(())
}

/// Folds `victim` into `survivor`: edges re-pointed (duplicates merged,
/// survivor-victim links dropped), properties merged under the store's
/// conflict policy, provenance unioned, the longer display name kept, the
/// victim's key and aliases redirected to the survivor, the survivor
/// re-embedded.
pub fn merge_nodes(
    txn: &mut Txn<'_>,
    survivor: NodeId,
    victim: NodeId,
    embedder: &dyn Embedder,
) -> Result<NodeId, MergeError> {
    if survivor == victim {
        return Err(MergeError::SelfMerge(survivor));
    }
    let s = txn.store().node(survivor).cloned().ok_or(StoreError::UnknownNode(survivor))?;
    let v = txn.store().node(victim).cloned().ok_or(StoreError::UnknownNode(victim))?;
    if s.label == Label::User || v.label == Label::User {
        return Err(MergeError::Root);
    }
    if s.label != v.label {
        return Err(MergeError::LabelMismatch { survivor: s.label, victim: v.label });
    }

    for eid in txn.store().incident_edges(victim) {
        let Some(old) = txn.remove_edge(eid) else { continue };
        let src = if old.src == victim { survivor } else { old.src };
        let dst = if old.dst == victim { survivor } else { old.dst };
        if src == dst {
            continue;
        }
        let mut e = Edge::new(src, old.predicate.clone(), dst).sources(old.provenance.iter().copied());
        e.properties = old.properties.clone();
        txn.upsert_edge(e)?;
    }

    let mut merged = s.clone();
    merge_properties(&mut merged.properties, &v.properties);
    merged.provenance.extend(v.provenance.iter().copied());
    if v.display_name.chars().count() > s.display_name.chars().count() {
        merged.display_name = v.display_name.clone();
        merged.display_name_truncated = v.display_name_truncated;
    }
    merged.created_at = s.created_at.min(v.created_at);
    if merged.valid_start.is_none() {
        merged.valid_start = v.valid_start;
        merged.valid_end = v.valid_end;
    }
    txn.replace_node(merged)?;

    let redirected: Vec<(Label, String)> = txn
        .store()
        .aliases()
        .iter()
        .filter(|(_, t)| **t == victim)
        .map(|(a, _)| (a.label, a.key.clone()))
        .collect();
    for (label, key) in redirected {
        txn.put_alias(label, &key, survivor)?;
    }
    txn.remove_isolated_node(victim)?;
    txn.put_alias(v.label, &v.canonical_key, survivor)?;
    reembed(txn, survivor, embedder)?;
    Ok(survivor)
}

/// Creates or merges the node for `m` inside `txn` and returns its id plus
/// the decision. When the mention is fuller than the node it matched (say
/// "Sarah Green" arriving after "S. Green"), the mention's node is created
/// and the older one merged into it, so the surviving id does not depend on
/// arrival order.
pub fn resolve_into(
    txn: &mut Txn<'_>,
    m: &Mention,
    head: Option<NodeId>,
    template: Node,
    embedder: &dyn Embedder,
    cfg: &ResolverConfig,
) -> Result<(NodeId, ResolutionDecision, bool), MergeError> {
    let decision = resolve(txn.store(), m, head, embedder, cfg)?;
    match decision.outcome {
        Outcome::Created(id) => {
            txn.upsert_node(template)?;
            reembed(txn, id, embedder)?;
            Ok((id, decision, true))
        }
        Outcome::Merged(existing) => {
            let old_key = txn.store().node(existing).map(|n| n.canonical_key.clone()).unwrap_or_default();
            let swap = decision.rule_fired != Rule::ExactKey && !is_head_key(&old_key) && fuller(&m.key, &old_key);
            if swap {
                let id = txn.upsert_node(template)?;
                let survivor = merge_nodes(txn, id, existing, embedder)?;
                let decision = ResolutionDecision { outcome: Outcome::Merged(survivor), ..decision };
                Ok((survivor, decision, true))
            } else {
                let mut n = txn.store().node(existing).cloned().ok_or(StoreError::UnknownNode(existing))?;
                n.provenance.extend(template.provenance.iter().copied());
                n.created_at = n.created_at.min(template.created_at);
                let grew = template.display_name.chars().count() > n.display_name.chars().count();
                if grew {
                    n.display_name = template.display_name.clone();
                }
                txn.replace_node(n)?;
                if grew {
                    reembed(txn, existing, embedder)?;
                }
                if m.key != old_key {
                    txn.put_alias(m.type_hint, &m.key, existing)?;
                }
                Ok((existing, decision, false))
            }
        }
    }
}
