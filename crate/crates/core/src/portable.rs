//! Portable newline-delimited JSON export and import.
//!
//! The first line is a header; every following line is one node, edge,
//! embedding, ledger entry, alias or the community state, grouped in that
//! order and sorted by id inside each group. Exporting the same store twice
//! gives the same bytes, and so does exporting a store rebuilt by import.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::community::CommunityState;
use crate::model::{Edge, EdgeId, Label, Node, NodeId, RecordId};
use crate::store::{AliasKey, Mutation, RecordEntry, Store, StoreError};
use crate::text::is_snake_case;
use crate::vector::{l2_norm, NORM_TOLERANCE};

pub const PORTABLE_FORMAT: &str = "ruva-portable";
pub const PORTABLE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PortableError {
    #[error("io failure: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("import target is not empty")]
    NotEmpty,
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Row {
    Header { format: String, version: u32, dimension: usize },
    Node(Node),
    Edge(Edge),
    Embedding { id: NodeId, vector: Vec<f32> },
    Record(RecordEntry),
    Alias { label: Label, key: String, target: NodeId },
    Communities(CommunityState),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub nodes: usize,
    pub edges: usize,
    pub embeddings: usize,
    pub records: usize,
    pub aliases: usize,
}

fn rows(store: &Store) -> Vec<Row> {
    let mut out = vec![Row::Header {
        format: PORTABLE_FORMAT.into(),
        version: PORTABLE_VERSION,
        dimension: store.dimension(),
    }];
    out.extend(store.nodes().cloned().map(Row::Node));
    out.extend(store.edges().cloned().map(Row::Edge));
    for id in store.vector_ids() {
        let vector = store.vector(id).expect("listed id").to_vec();
        out.push(Row::Embedding { id, vector });
    }
    out.extend(store.records().cloned().map(Row::Record));
    for (a, target) in store.aliases() {
        out.push(Row::Alias { label: a.label, key: a.key.clone(), target: *target });
    }
    out.push(Row::Communities(store.communities().clone()));
    out
}

pub fn export_portable(store: &Store, mut w: impl Write) -> io::Result<()> {
    for row in rows(store) {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn export_bytes(store: &Store) -> Vec<u8> {
    let mut buf = Vec::new();
    export_portable(store, &mut buf).expect("writing to memory");
    buf
}

pub fn export_to_file(store: &Store, path: impl AsRef<Path>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    export_portable(store, &mut w)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()
}

struct Parsed {
    nodes: BTreeMap<NodeId, (usize, Node)>,
    edges: BTreeMap<EdgeId, (usize, Edge)>,
    vectors: BTreeMap<NodeId, (usize, Vec<f32>)>,
    records: BTreeMap<RecordId, RecordEntry>,
    aliases: BTreeMap<AliasKey, (usize, NodeId)>,
    communities: Option<(usize, CommunityState)>,
}

fn bad(line: usize, message: impl Into<String>) -> PortableError {
    PortableError::Malformed { line, message: message.into() }
}

fn parse(r: impl BufRead, dimension: usize) -> Result<Parsed, PortableError> {
    let mut p = Parsed {
        nodes: BTreeMap::new(),
        edges: BTreeMap::new(),
        vectors: BTreeMap::new(),
        records: BTreeMap::new(),
        aliases: BTreeMap::new(),
        communities: None,
    };
    let mut saw_header = false;
    for (i, text) in r.lines().enumerate() {
        let line = i + 1;
        let text = text?;
        let row: Row = serde_json::from_str(&text).map_err(|e| bad(line, e.to_string()))?;
        if !saw_header {
            let Row::Header { format, version, dimension: d } = row else {
                return Err(bad(line, "expected header line"));
            };
            if format != PORTABLE_FORMAT || version != PORTABLE_VERSION {
                return Err(bad(line, format!("unsupported format {format} v{version}")));
            }
            if d != dimension {
                return Err(bad(line, format!("dimension {d} does not match store dimension {dimension}")));
            }
            saw_header = true;
            continue;
        }
        let dup = |what: &str| bad(line, format!("duplicate {what}"));
        match row {
            Row::Header { .. } => return Err(bad(line, "second header")),
            Row::Node(n) => {
                if n.id != NodeId::derive(n.label, &n.canonical_key) {
                    return Err(bad(line, format!("node id {} does not match its label and key", n.id)));
                }
                if n.canonical_key.is_empty() {
                    return Err(bad(line, "empty canonical key"));
                }
                if n.label != Label::User && n.provenance.is_empty() {
                    return Err(bad(line, format!("node {} has no provenance", n.id)));
                }
                if let (Some(s), Some(e)) = (n.valid_start, n.valid_end) {
                    if s > e {
                        return Err(bad(line, format!("node {} ends before it starts", n.id)));
                    }
                }
                if p.nodes.insert(n.id, (line, n)).is_some() {
                    return Err(dup("node"));
                }
            }
            Row::Edge(e) => {
                if !is_snake_case(&e.predicate) {
                    return Err(bad(line, format!("predicate {:?} is not snake_case", e.predicate)));
                }
                if e.id != EdgeId::derive(e.src, &e.predicate, e.dst) {
                    return Err(bad(line, format!("edge id {} does not match its endpoints", e.id)));
                }
                if p.edges.insert(e.id, (line, e)).is_some() {
                    return Err(dup("edge"));
                }
            }
            Row::Embedding { id, vector } => {
                if vector.len() != dimension {
                    return Err(bad(line, format!("embedding has {} components, expected {dimension}", vector.len())));
                }
                if vector.iter().any(|x| !x.is_finite()) {
                    return Err(bad(line, "embedding has a non-finite component"));
                }
                let norm = l2_norm(&vector);
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(bad(line, format!("embedding norm {norm} is not 1")));
                }
                if p.vectors.insert(id, (line, vector)).is_some() {
                    return Err(dup("embedding"));
                }
            }
            Row::Record(r) => {
                if p.records.insert(r.id, r).is_some() {
                    return Err(dup("ledger entry"));
                }
            }
            Row::Alias { label, key, target } => {
                if p.aliases.insert(AliasKey { label, key }, (line, target)).is_some() {
                    return Err(dup("alias"));
                }
            }
            Row::Communities(c) => {
                if p.communities.replace((line, c)).is_some() {
                    return Err(dup("community state"));
                }
            }
        }
    }
    if !saw_header {
        return Err(bad(1, "missing header"));
    }
    Ok(p)
}

fn check_references(p: &Parsed, root: NodeId) -> Result<(), PortableError> {
    let users: Vec<_> = p.nodes.values().filter(|(_, n)| n.label == Label::User).collect();
    match users.as_slice() {
        [(_, n)] if n.id == root => {}
        [(line, _)] => return Err(bad(*line, "User root has an unexpected id")),
        [] => return Err(bad(1, "no User root")),
        [_, (line, _), ..] => return Err(bad(*line, "second User root")),
    }
    for (line, e) in p.edges.values() {
        for end in [e.src, e.dst] {
            if !p.nodes.contains_key(&end) {
                return Err(bad(*line, format!("edge endpoint {end} does not exist")));
            }
        }
    }
    for (id, (line, _)) in &p.vectors {
        if !p.nodes.contains_key(id) {
            return Err(bad(*line, format!("embedding for unknown node {id}")));
        }
    }
    for (line, target) in p.aliases.values() {
        if !p.nodes.contains_key(target) {
            return Err(bad(*line, format!("alias points at unknown node {target}")));
        }
    }
    if let Some((line, c)) = &p.communities {
        let live: BTreeSet<&NodeId> = p.nodes.keys().collect();
        if c.levels.iter().any(|lvl| lvl.assignment.keys().any(|id| !live.contains(id))) {
            return Err(bad(*line, "community assignment names an unknown node"));
        }
    }
    Ok(())
}

/// Loads an export into a store that holds nothing but its User root.
pub fn import_portable(store: &mut Store, r: impl BufRead) -> Result<ImportSummary, PortableError> {
    if !store.is_pristine() {
        return Err(PortableError::NotEmpty);
    }
    let p = parse(r, store.dimension())?;
    check_references(&p, store.user_id())?;
    let summary = ImportSummary {
        nodes: p.nodes.len(),
        edges: p.edges.len(),
        embeddings: p.vectors.len(),
        records: p.records.len(),
        aliases: p.aliases.len(),
    };
    let mut rows = Vec::new();
    for (_, (_, mut node)) in p.nodes {
        node.has_vector = false;
        rows.push(Mutation::PutNode { node: Box::new(node) });
    }
    rows.extend(p.edges.into_values().map(|(_, edge)| Mutation::PutEdge { edge: Box::new(edge) }));
    rows.extend(p.vectors.into_iter().map(|(id, (_, vector))| Mutation::PutVector { id, vector }));
    rows.extend(p.records.into_values().map(|record| Mutation::PutRecord { record }));
    rows.extend(p.aliases.into_iter().map(|(alias, (_, target))| Mutation::PutAlias { alias, target }));
    let communities = p.communities.map(|(_, c)| c).unwrap_or_default();
    rows.push(Mutation::SetCommunities { state: Box::new(communities) });
    store.load_rows(rows)?;
    Ok(summary)
}

pub fn import_from_file(store: &mut Store, path: impl AsRef<Path>) -> Result<ImportSummary, PortableError> {
    import_portable(store, BufReader::new(File::open(path)?))
}
