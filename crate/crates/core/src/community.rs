//! Leiden community detection with modularity as the quality function.
//!
//! The graph is the undirected projection of the store without the User
//! root: edge direction is dropped, parallel edges between a pair sum their
//! weights (1 each), self-loops are ignored. The root is then given a
//! singleton community of its own at every level so every live node has an
//! assignment.
//!
//! One pass is: fast local moving (queue based), refinement of each
//! community into well-connected subcommunities, aggregation of the refined
//! partition, repeated until local moving leaves every aggregate node alone.
//! Passes restart from the previous result until modularity stops rising.
//! The reported levels are the refined partitions of the best pass followed
//! by its final partition, finest first, so level `l + 1` is always a union
//! of level `l` communities and the last level is the converged one.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Label, NodeId};
use crate::store::{Result as StoreResult, Store, StoreError};

const EPS: f64 = 1e-12;
const MAX_PASSES: usize = 32;
/// Passes without improvement before a run stops.
const PATIENCE: usize = 4;
/// Small graphs get extra restarts until runs x nodes reaches this.
const RESTART_BUDGET: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub level: u32,
    pub assignment: BTreeMap<NodeId, u32>,
    /// Modularity of this level over the projection.
    pub quality: f64,
}

impl Partition {
    pub fn community_count(&self) -> usize {
        self.assignment.values().collect::<BTreeSet<_>>().len()
    }

    pub fn members(&self, community: u32) -> Vec<NodeId> {
        self.assignment.iter().filter(|(_, c)| **c == community).map(|(n, _)| *n).collect()
    }
}

/// Persisted community assignments. `stale` is set by every write that
/// changes the graph and cleared by [`refresh_communities`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityState {
    pub levels: Vec<Partition>,
    pub stale: bool,
}

impl Default for CommunityState {
    fn default() -> Self {
        CommunityState { levels: Vec::new(), stale: true }
    }
}

impl CommunityState {
    pub fn community_of(&self, level: usize, id: NodeId) -> Option<u32> {
        self.levels.get(level)?.assignment.get(&id).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeidenConfig {
    pub resolution: f64,
    pub seed: u64,
    pub max_levels: usize,
    /// Minimum number of independent runs from singletons, each with its own
    /// seeded stream; the highest-quality result wins. Graphs with fewer than
    /// `RESTART_BUDGET / restarts` nodes get more runs.
    pub restarts: usize,
}

impl Default for LeidenConfig {
    fn default() -> Self {
        LeidenConfig { resolution: 1.0, seed: 42, max_levels: 3, restarts: 16 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CommunityError {
    #[error("cannot cluster an empty graph")]
    EmptyGraph,
    #[error("resolution must be a positive finite number, got {0}")]
    InvalidResolution(f64),
    #[error("max_levels must be at least 1")]
    NoLevels,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Undirected weighted graph over `nodes`; `edges` index into `nodes`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedGraph {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<(usize, usize, f64)>,
}

/// Projection of the store used for clustering.
pub fn project(store: &Store) -> WeightedGraph {
    let user = store.user_id();
    let nodes: Vec<NodeId> = store.nodes().filter(|n| n.label != Label::User).map(|n| n.id).collect();
    let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for e in store.edges() {
        if e.src == user || e.dst == user || e.src == e.dst {
            continue;
        }
        let (a, b) = (index[&e.src], index[&e.dst]);
        *pairs.entry((a.min(b), a.max(b))).or_default() += 1.0;
    }
    WeightedGraph { nodes, edges: pairs.into_iter().map(|((a, b), w)| (a, b, w)).collect() }
}

#[derive(Debug, Clone)]
struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
    /// A_ii: weight of edges internal to an aggregate node, both directions.
    self_w: Vec<f64>,
    strength: Vec<f64>,
    two_m: f64,
}

impl Graph {
    fn from_weighted(g: &WeightedGraph) -> Graph {
        let n = g.nodes.len();
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for &(a, b, w) in &g.edges {
            if a == b || w <= 0.0 {
                continue;
            }
            *acc[a].entry(b).or_default() += w;
            *acc[b].entry(a).or_default() += w;
        }
        Graph::build(acc, vec![0.0; n])
    }

    fn build(acc: Vec<BTreeMap<usize, f64>>, self_w: Vec<f64>) -> Graph {
        let adj: Vec<Vec<(usize, f64)>> = acc.into_iter().map(|m| m.into_iter().collect()).collect();
        let strength: Vec<f64> =
            adj.iter().zip(&self_w).map(|(row, s)| s + row.iter().map(|(_, w)| w).sum::<f64>()).collect();
        let two_m = strength.iter().sum();
        Graph { adj, self_w, strength, two_m }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn aggregate(&self, part: &[usize], k: usize) -> Graph {
        let mut acc: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut self_w = vec![0.0; k];
        for (i, row) in self.adj.iter().enumerate() {
            let ci = part[i];
            self_w[ci] += self.self_w[i];
            for &(j, w) in row {
                let cj = part[j];
                if ci == cj {
                    self_w[ci] += w;
                } else {
                    *acc[ci].entry(cj).or_default() += w;
                }
            }
        }
        Graph::build(acc, self_w)
    }

    fn modularity(&self, part: &[usize], gamma: f64) -> f64 {
        if self.two_m <= 0.0 {
            return 0.0;
        }
        let k = part.iter().max().map_or(0, |m| m + 1);
        let mut internal = vec![0.0; k];
        let mut total = vec![0.0; k];
        for (i, row) in self.adj.iter().enumerate() {
            let c = part[i];
            total[c] += self.strength[i];
            internal[c] += self.self_w[i];
            for &(j, w) in row {
                if part[j] == c {
                    internal[c] += w;
                }
            }
        }
        internal.iter().zip(&total).map(|(a, t)| a - gamma * t * t / self.two_m).sum::<f64>() / self.two_m
    }
}

/// Relabels communities 0.. in order of first appearance.
fn renumber(part: &[usize]) -> (Vec<usize>, usize) {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(part.len());
    for &c in part {
        let next = map.len();
        out.push(*map.entry(c).or_insert(next));
    }
    (out, map.len())
}

/// Splits every community into its connected components. Never lowers
/// modularity: parts with no edges between them only lose the penalty term.
fn split_disconnected(g: &Graph, part: &[usize]) -> Vec<usize> {
    let mut out = vec![usize::MAX; g.len()];
    let mut next = 0;
    for start in 0..g.len() {
        if out[start] != usize::MAX {
            continue;
        }
        out[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &(u, _) in &g.adj[v] {
                if out[u] == usize::MAX && part[u] == part[start] {
                    out[u] = next;
                    queue.push_back(u);
                }
            }
        }
        next += 1;
    }
    out
}

struct Scratch {
    weight: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<usize>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch { weight: vec![0.0; n], seen: vec![false; n], touched: Vec::new() }
    }

    fn add(&mut self, c: usize, w: f64) {
        if !self.seen[c] {
            self.seen[c] = true;
            self.touched.push(c);
        }
        self.weight[c] += w;
    }

    fn clear(&mut self) {
        for c in self.touched.drain(..) {
            self.weight[c] = 0.0;
            self.seen[c] = false;
        }
    }
}

/// Queue-based local moving. Returns whether any node moved.
fn move_nodes(g: &Graph, part: &mut [usize], gamma: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = g.len();
    let mut total = vec![0.0; n];
    let mut size = vec![0usize; n];
    for i in 0..n {
        total[part[i]] += g.strength[i];
        size[part[i]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|c| size[*c] == 0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut in_queue = vec![true; n];
    let mut queue: VecDeque<usize> = order.into();
    let mut scratch = Scratch::new(n);
    let mut moved = false;
    while let Some(v) = queue.pop_front() {
        in_queue[v] = false;
        let kv = g.strength[v];
        let cur = part[v];
        for &(u, w) in &g.adj[v] {
            scratch.add(part[u], w);
        }
        total[cur] -= kv;
        size[cur] -= 1;
        let gain = |c: usize, w: f64| w - gamma * kv * total[c] / g.two_m;
        let mut best = cur;
        let mut best_gain = gain(cur, scratch.weight[cur]);
        for &c in &scratch.touched {
            let g_c = gain(c, scratch.weight[c]);
            if g_c > best_gain + EPS {
                best = c;
                best_gain = g_c;
            }
        }
        if best_gain < -EPS && size[cur] > 0 {
            while let Some(c) = empty.pop() {
                if size[c] == 0 && c != cur {
                    best = c;
                    break;
                }
            }
        }
        scratch.clear();
        total[best] += kv;
        size[best] += 1;
        part[v] = best;
        if size[cur] == 0 {
            empty.push(cur);
        }
        if best != cur {
            moved = true;
            for &(u, _) in &g.adj[v] {
                if part[u] != best && !in_queue[u] {
                    in_queue[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    moved
}

/// Splits each community of `part` into well-connected subcommunities,
/// starting from singletons. A singleton node that is well connected to its
/// community joins a uniformly chosen neighbouring well-connected
/// subcommunity among those whose merge does not lower modularity.
fn refine(g: &Graph, part: &[usize], gamma: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.len();
    let mut r: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut total: Vec<f64> = g.strength.clone();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut comm_total: BTreeMap<usize, f64> = BTreeMap::new();
    for i in 0..n {
        members.entry(part[i]).or_default().push(i);
        *comm_total.entry(part[i]).or_default() += g.strength[i];
    }
    // w(T, C \ T) for each subcommunity T.
    let mut external: Vec<f64> = (0..n)
        .map(|v| g.adj[v].iter().filter(|(u, _)| part[*u] == part[v]).map(|(_, w)| w).sum())
        .collect();
    let mut scratch = Scratch::new(n);
    for (c, nodes) in members.iter_mut() {
        let kc = comm_total[c];
        nodes.shuffle(rng);
        for &v in nodes.iter() {
            if size[r[v]] != 1 {
                continue;
            }
            let kv = g.strength[v];
            if external[v] + EPS < gamma * kv * (kc - kv) / g.two_m {
                continue;
            }
            for &(u, w) in &g.adj[v] {
                if part[u] == *c && r[u] != r[v] {
                    scratch.add(r[u], w);
                }
            }
            let candidates: Vec<usize> = scratch
                .touched
                .iter()
                .copied()
                .filter(|&t| {
                    let wvt = scratch.weight[t];
                    let connected = external[t] + EPS >= gamma * total[t] * (kc - total[t]) / g.two_m;
                    wvt > 0.0 && connected && wvt - gamma * kv * total[t] / g.two_m >= -EPS
                })
                .collect();
            if let Some(&t) = candidates.choose(rng) {
                let wvt = scratch.weight[t];
                external[t] = external[t] + external[v] - 2.0 * wvt;
                total[t] += kv;
                size[t] += 1;
                size[r[v]] = 0;
                r[v] = t;
            }
            scratch.clear();
        }
    }
    r
}

/// Result of one clustering run, before mapping back to node ids.
#[derive(Debug, Clone)]
pub struct LeidenOutcome {
    /// Partitions over `graph.nodes` indices, finest first.
    pub levels: Vec<Vec<usize>>,
    /// Modularity of each level.
    pub qualities: Vec<f64>,
    /// Modularity after every local-moving phase, in execution order.
    pub q_trace: Vec<f64>,
}

impl LeidenOutcome {
    pub fn top(&self) -> &[usize] {
        self.levels.last().expect("at least one level")
    }
}

struct Pass {
    levels: Vec<Vec<usize>>,
    final_part: Vec<usize>,
    quality: f64,
}

fn run_pass(base: &Graph, init: Vec<usize>, gamma: f64, rng: &mut ChaCha8Rng, trace: &mut Vec<f64>) -> Pass {
    let mut g = base.clone();
    let mut part = init;
    // Aggregate node currently holding each original node.
    let mut owner: Vec<usize> = (0..base.len()).collect();
    let mut levels = Vec::new();
    loop {
        move_nodes(&g, &mut part, gamma, rng);
        let flat: Vec<usize> = owner.iter().map(|&a| part[a]).collect();
        trace.push(base.modularity(&renumber(&flat).0, gamma));
        let (_, k) = renumber(&part);
        if k == g.len() {
            break;
        }
        let (r, kr) = renumber(&refine(&g, &part, gamma, rng));
        levels.push(owner.iter().map(|&a| r[a]).collect::<Vec<_>>());
        if kr == g.len() {
            break;
        }
        let mut next_part = vec![0; kr];
        for (v, &sub) in r.iter().enumerate() {
            next_part[sub] = part[v];
        }
        g = g.aggregate(&r, kr);
        for o in owner.iter_mut() {
            *o = r[*o];
        }
        part = renumber(&next_part).0;
    }
    let flat: Vec<usize> = owner.iter().map(|&a| part[a]).collect();
    let final_part = renumber(&split_disconnected(base, &flat)).0;
    let quality = base.modularity(&final_part, gamma);
    if levels.last() != Some(&final_part) {
        levels.push(final_part.clone());
    }
    Pass { levels, final_part, quality }
}

/// Runs Leiden on `graph`. Deterministic for a given `config.seed`.
pub fn leiden(graph: &WeightedGraph, config: &LeidenConfig) -> Result<LeidenOutcome, CommunityError> {
    if graph.nodes.is_empty() {
        return Err(CommunityError::EmptyGraph);
    }
    if !(config.resolution.is_finite() && config.resolution > 0.0) {
        return Err(CommunityError::InvalidResolution(config.resolution));
    }
    if config.max_levels == 0 {
        return Err(CommunityError::NoLevels);
    }
    let gamma = config.resolution;
    let base = Graph::from_weighted(graph);
    let mut winner: Option<(Pass, Vec<f64>)> = None;
    let runs = config.restarts.max(1).max(RESTART_BUDGET / base.len());
    for run in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(run as u64);
        let mut q_trace = Vec::new();
        let mut best = run_pass(&base, (0..base.len()).collect(), gamma, &mut rng, &mut q_trace);
        let mut idle = 0;
        for _ in 1..MAX_PASSES {
            let next = run_pass(&base, best.final_part.clone(), gamma, &mut rng, &mut q_trace);
            if next.quality > best.quality + EPS {
                best = next;
                idle = 0;
            } else {
                idle += 1;
                if idle >= PATIENCE {
                    break;
                }
            }
        }
        if winner.as_ref().is_none_or(|(w, _)| best.quality > w.quality + EPS) {
            winner = Some((best, q_trace));
        }
    }
    let (best, q_trace) = winner.expect("at least one run");
    let skip = best.levels.len().saturating_sub(config.max_levels);
    let levels: Vec<Vec<usize>> = best.levels.into_iter().skip(skip).collect();
    let qualities = levels.iter().map(|p| base.modularity(p, gamma)).collect();
    Ok(LeidenOutcome { levels, qualities, q_trace })
}

/// Modularity of `part` (community index per node) on `graph`.
pub fn modularity(graph: &WeightedGraph, part: &[usize], resolution: f64) -> f64 {
    Graph::from_weighted(graph).modularity(&renumber(part).0, resolution)
}

/// Maps an index partition to node ids. Communities are numbered by their
/// smallest member id; `root`, when given, is added as a singleton.
fn to_assignment(graph: &WeightedGraph, part: &[usize], root: Option<NodeId>) -> BTreeMap<NodeId, u32> {
    let mut smallest: BTreeMap<usize, NodeId> = BTreeMap::new();
    for (i, &c) in part.iter().enumerate() {
        let id = graph.nodes[i];
        smallest.entry(c).and_modify(|s| *s = (*s).min(id)).or_insert(id);
    }
    let mut by_member: Vec<(NodeId, Option<usize>)> = smallest.iter().map(|(c, id)| (*id, Some(*c))).collect();
    if let Some(r) = root {
        by_member.push((r, None));
    }
    by_member.sort();
    let number: BTreeMap<Option<usize>, u32> =
        by_member.iter().enumerate().map(|(n, (_, c))| (*c, n as u32)).collect();
    let mut out: BTreeMap<NodeId, u32> =
        part.iter().enumerate().map(|(i, c)| (graph.nodes[i], number[&Some(*c)])).collect();
    if let Some(r) = root {
        out.insert(r, number[&None]);
    }
    out
}

/// Clusters the store's projection and converts the result to partitions.
pub fn detect(store: &Store, config: &LeidenConfig) -> Result<Vec<Partition>, CommunityError> {
    let graph = project(store);
    let outcome = leiden(&graph, config)?;
    Ok(outcome
        .levels
        .iter()
        .zip(&outcome.qualities)
        .enumerate()
        .map(|(level, (part, q))| Partition {
            level: level as u32,
            assignment: to_assignment(&graph, part, Some(store.user_id())),
            quality: *q,
        })
        .collect())
}

/// Recomputes and persists assignments when they are stale; otherwise a
/// no-op. Returns whether anything was recomputed.
pub fn refresh_communities(store: &mut Store, config: &LeidenConfig) -> Result<bool, CommunityError> {
    if !store.communities().stale {
        return Ok(false);
    }
    let levels = detect(store, config)?;
    let mut txn = store.transaction();
    txn.set_communities(CommunityState { levels, stale: false });
    txn.commit()?;
    Ok(true)
}

/// Like [`refresh_communities`] but a store holding only the User root is
/// left with no levels instead of an error.
pub fn refresh_if_possible(store: &mut Store, config: &LeidenConfig) -> StoreResult<bool> {
    match refresh_communities(store, config) {
        Ok(changed) => Ok(changed),
        Err(CommunityError::EmptyGraph) => Ok(false),
        Err(CommunityError::Store(e)) => Err(e),
        Err(e) => {
            tracing::warn!(error = %e, "community refresh skipped");
            Ok(false)
        }
    }
}

#[cfg(test)]
mod tests;
