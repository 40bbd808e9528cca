//! Deterministic extractive answerer. Every value it prints is read from,
//! or summed from, the retrieved subgraph; anything it cannot ground is a
//! refusal.
//!
//! Handlers, tried in order:
//!
//! - temporal compare: `did <X> ... before|after <Y>`
//! - sum: `how much ... spent|spend|cost|paid|pay`
//! - lookup: `what|which|when|where|who ...`

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::LazyLock;

use regex::Regex;

use super::{is_root, Answer, Engine, Generator, RetrievalError, RetrievedNode, RetrievedSubgraph};
use crate::model::{Label, NodeId, Scalar, Timestamp};
use crate::text::{content_words, words_match};

static TEMPORAL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:did|was|were|do|does|is)\s+(.+?)\s+(before|after)\s+(.+?)[\s?.!]*$").unwrap()
});
static SUM_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bhow\s+much\b.*\b(spent|spend|spending|cost|costs|paid|pay)\b").unwrap());
static LOOKUP_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\s*(what|which|when|where|who)\b(.*)$").unwrap());

/// Extra words dropped from lookup terms: they name the kind of answer,
/// not the thing asked about.
const ASK_WORDS: &[&str] = &["time", "date", "day", "happen", "happened", "take", "place", "held", "located", "name"];

#[derive(Debug, Default, Clone, Copy)]
pub struct StructuredGenerator;

impl Generator for StructuredGenerator {
    fn engine(&self) -> Engine {
        Engine::Structured
    }

    fn generate(&self, question: &str, g: &RetrievedSubgraph) -> Result<Answer, RetrievalError> {
        let view = View::new(g);
        let answer = if let Some(c) = TEMPORAL_RE.captures(question) {
            temporal(&view, &c[1], &c[3])
        } else if SUM_RE.is_match(question) {
            sum(&view, question)
        } else if let Some(c) = LOOKUP_RE.captures(question) {
            lookup(&view, &c[1].to_ascii_lowercase(), &c[2])
        } else {
            None
        };
        Ok(answer.unwrap_or_else(|| Answer::refusal(Engine::Structured)))
    }
}

struct View<'a> {
    g: &'a RetrievedSubgraph,
    by_id: BTreeMap<NodeId, &'a RetrievedNode>,
    /// Adjacency without the User root.
    adj: BTreeMap<NodeId, Vec<(&'a str, NodeId)>>,
    anchor_rank: BTreeMap<NodeId, usize>,
}

impl<'a> View<'a> {
    fn new(g: &'a RetrievedSubgraph) -> Self {
        let by_id: BTreeMap<NodeId, &RetrievedNode> = g.nodes.iter().map(|n| (n.node.id, n)).collect();
        let root = |id: &NodeId| by_id.get(id).is_some_and(|n| is_root(&n.node));
        let mut adj: BTreeMap<NodeId, Vec<(&str, NodeId)>> = BTreeMap::new();
        for e in &g.edges {
            if root(&e.src) || root(&e.dst) {
                continue;
            }
            adj.entry(e.src).or_default().push((e.predicate.as_str(), e.dst));
            adj.entry(e.dst).or_default().push((e.predicate.as_str(), e.src));
        }
        let anchor_rank = g.anchors.iter().enumerate().map(|(i, a)| (a.id, i)).collect();
        View { g, by_id, adj, anchor_rank }
    }

    fn candidates(&self) -> impl Iterator<Item = &'a RetrievedNode> + '_ {
        self.g.nodes.iter().filter(|n| !is_root(&n.node))
    }

    fn own_words(&self, id: NodeId) -> Vec<String> {
        let n = &self.by_id[&id].node;
        let mut w = content_words(&n.display_name);
        w.push(n.label.as_str().to_ascii_lowercase());
        w
    }

    fn neighbour_words(&self, id: NodeId) -> Vec<String> {
        self.adj
            .get(&id)
            .into_iter()
            .flatten()
            .flat_map(|(_, other)| content_words(&self.by_id[other].node.display_name))
            .collect()
    }

    fn neighbours(&self, id: NodeId, predicates: &[&str]) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self
            .adj
            .get(&id)
            .into_iter()
            .flatten()
            .filter(|(p, _)| predicates.contains(p))
            .map(|(_, o)| *o)
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Sort key preferring anchors (best first), then low hop, then id.
    fn rank(&self, id: NodeId) -> (usize, u32, NodeId) {
        (self.anchor_rank.get(&id).copied().unwrap_or(usize::MAX), self.by_id[&id].hop, id)
    }

    fn name(&self, id: NodeId) -> &str {
        &self.by_id[&id].node.display_name
    }
}

fn covered(term: &str, words: &[String]) -> bool {
    words.iter().any(|w| words_match(term, w))
}

fn answer(text: String, citations: impl IntoIterator<Item = NodeId>) -> Answer {
    let mut c: Vec<NodeId> = citations.into_iter().collect();
    c.sort();
    c.dedup();
    Answer { text, citations: c, refused: false, engine: Engine::Structured }
}

/// The timestamped node whose own words plus its neighbours' names cover
/// every term.
fn find_timed(v: &View<'_>, terms: &[String], exclude: Option<NodeId>) -> Option<NodeId> {
    if terms.is_empty() {
        return None;
    }
    v.candidates()
        .filter(|n| Some(n.node.id) != exclude && n.node.time_interval().is_some())
        .filter_map(|n| {
            let own = v.own_words(n.node.id);
            let near = v.neighbour_words(n.node.id);
            let all = terms.iter().all(|t| covered(t, &own) || covered(t, &near));
            let own_hits = terms.iter().filter(|t| covered(t, &own)).count();
            all.then_some((own_hits, n.node.id))
        })
        .max_by(|a, b| a.0.cmp(&b.0).then(v.rank(b.1).cmp(&v.rank(a.1))))
        .map(|(_, id)| id)
}

fn temporal(v: &View<'_>, x: &str, y: &str) -> Option<Answer> {
    let (tx, ty) = (content_words(x), content_words(y));
    let a = find_timed(v, &tx, None)?;
    let b = find_timed(v, &ty, Some(a))?;
    let sa = v.by_id[&a].node.time_interval()?.start;
    let sb = v.by_id[&b].node.time_interval()?.start;
    let rel = match sa.cmp(&sb) {
        std::cmp::Ordering::Less => "before",
        std::cmp::Ordering::Greater => "after",
        std::cmp::Ordering::Equal => "at the same time as",
    };
    Some(answer(format!("{} was {rel} {}.", v.name(a), v.name(b)), [a, b]))
}

pub(crate) fn format_amount(x: f64) -> String {
    let r = (x * 100.0).round() / 100.0;
    if r.fract() == 0.0 {
        format!("{}", r as i64)
    } else {
        let s = format!("{r:.2}");
        s.trim_end_matches('0').to_string()
    }
}

/// Words of a spending question that say nothing about what was bought.
const SUM_WORDS: &[&str] = &["much", "spent", "spend", "spending", "cost", "costs", "paid", "pay", "far", "total"];

fn component(v: &View<'_>, start: NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(id) = queue.pop_front() {
        for (_, o) in v.adj.get(&id).into_iter().flatten() {
            if seen.insert(*o) {
                queue.push_back(*o);
            }
        }
    }
    seen
}

/// Totals the amounts connected to the best anchor that the question names
/// and that reaches at least one amount.
fn sum(v: &View<'_>, question: &str) -> Option<Answer> {
    let terms: Vec<String> = content_words(question).into_iter().filter(|w| !SUM_WORDS.contains(&w.as_str())).collect();
    let mut items: Vec<(Option<Timestamp>, String, NodeId)> = Vec::new();
    let mut totals: BTreeMap<String, f64> = BTreeMap::new();
    for a in &v.g.anchors {
        if !v.by_id.contains_key(&a.id) || is_root(&v.by_id[&a.id].node) {
            continue;
        }
        let own = v.own_words(a.id);
        let near = v.neighbour_words(a.id);
        if !terms.iter().any(|t| covered(t, &own) || covered(t, &near)) {
            continue;
        }
        for id in component(v, a.id) {
            let n = &v.by_id[&id].node;
            let (Some(value), Some(Scalar::Text(cur))) =
                (n.properties.get("amount_value").and_then(Scalar::as_f64), n.properties.get("amount_currency"))
            else {
                continue;
            };
            *totals.entry(cur.clone()).or_default() += value;
            items.push((n.valid_start, n.display_name.clone(), n.id));
        }
        if !items.is_empty() {
            break;
        }
    }
    if items.is_empty() {
        return None;
    }
    items.sort();
    let money: Vec<String> = totals.iter().map(|(c, t)| format!("{} {c}", format_amount(*t))).collect();
    let names: Vec<&str> = items.iter().map(|(_, n, _)| n.as_str()).collect();
    let text = format!("You have spent {} ({}).", money.join(" and "), names.join(", "));
    Some(answer(text, items.iter().map(|i| i.2)))
}

fn best_by<F>(v: &View<'_>, mut score: F) -> Option<(usize, NodeId)>
where
    F: FnMut(&RetrievedNode) -> usize,
{
    v.candidates()
        .map(|n| (score(n), n.node.id))
        .filter(|(s, _)| *s > 0)
        .max_by(|a, b| a.0.cmp(&b.0).then(v.rank(b.1).cmp(&v.rank(a.1))))
}

fn when(t: Timestamp) -> String {
    t.datetime().format("%Y-%m-%d %H:%M UTC").to_string()
}

const LOCATION_KEYS: &[&str] = &["location", "address", "place", "venue", "city"];
const PEOPLE_PREDICATES: &[&str] = &["with", "from", "mentions", "represents"];
const HIDDEN_KEYS: &[&str] = &["amount_value", "amount_currency", "caption", "text"];

fn lookup(v: &View<'_>, wh: &str, rest: &str) -> Option<Answer> {
    let terms: Vec<String> = content_words(rest).into_iter().filter(|w| !ASK_WORDS.contains(&w.as_str())).collect();
    if terms.is_empty() {
        return None;
    }
    let own_score = |n: &RetrievedNode| terms.iter().filter(|t| covered(t, &v.own_words(n.node.id))).count();
    match wh {
        "when" => {
            let (_, id) = best_by(v, |n| if n.node.time_interval().is_some() { own_score(n) } else { 0 })?;
            let iv = v.by_id[&id].node.time_interval()?;
            let text = if iv.end == iv.start {
                format!("{}: {}.", v.name(id), when(iv.start))
            } else {
                format!("{}: {} to {}.", v.name(id), when(iv.start), when(iv.end))
            };
            Some(answer(text, [id]))
        }
        "where" => {
            let has_place = |n: &RetrievedNode| {
                !v.neighbours(n.node.id, &["located_at"]).is_empty()
                    || LOCATION_KEYS.iter().any(|k| n.node.properties.contains_key(*k))
            };
            let (_, id) = best_by(v, |n| if has_place(n) { own_score(n) } else { 0 })?;
            let places = v.neighbours(id, &["located_at"]);
            if !places.is_empty() {
                let names: Vec<&str> = places.iter().map(|p| v.name(*p)).collect();
                return Some(answer(format!("{} is at {}.", v.name(id), names.join(", ")), places.iter().copied().chain([id])));
            }
            let n = &v.by_id[&id].node;
            let value = LOCATION_KEYS.iter().find_map(|k| n.properties.get(*k))?;
            Some(answer(format!("{} is at {value}.", n.display_name), [id]))
        }
        "who" => {
            let people = |id: NodeId| -> Vec<NodeId> {
                v.neighbours(id, PEOPLE_PREDICATES)
                    .into_iter()
                    .filter(|p| matches!(v.by_id[p].node.label, Label::Person | Label::Contact))
                    .collect()
            };
            let (_, id) = best_by(v, |n| if people(n.node.id).is_empty() { 0 } else { own_score(n) })?;
            let ps = people(id);
            let names: Vec<&str> = ps.iter().map(|p| v.name(*p)).collect();
            Some(answer(format!("{}: {}.", v.name(id), names.join(", ")), ps.iter().copied().chain([id])))
        }
        _ => {
            // Property whose key words match the question, on a node the
            // question names.
            let mut best: Option<((usize, usize), NodeId, String)> = None;
            for n in v.candidates() {
                let node_hits = own_score(n);
                if node_hits == 0 {
                    continue;
                }
                for k in n.node.properties.keys() {
                    if HIDDEN_KEYS.contains(&k.as_str()) {
                        continue;
                    }
                    let key_words: Vec<String> = k.split(['_', '#']).map(str::to_string).collect();
                    let key_hits = terms.iter().filter(|t| covered(t, &key_words)).count();
                    if key_hits == 0 {
                        continue;
                    }
                    let s = (key_hits + node_hits, key_hits);
                    let better = match &best {
                        None => true,
                        Some((bs, bid, bk)) => s > *bs || (s == *bs && (v.rank(n.node.id), k) < (v.rank(*bid), bk)),
                    };
                    if better {
                        best = Some((s, n.node.id, k.clone()));
                    }
                }
            }
            let (_, id, key) = best?;
            let value = v.by_id[&id].node.properties.get(&key)?;
            let shown = match value {
                Scalar::Instant(t) => when(*t),
                other => other.to_string(),
            };
            let label = key.split('#').next().unwrap_or(&key).replace('_', " ");
            Some(answer(format!("{} {label}: {shown}.", v.name(id)), [id]))
        }
    }
}
