//! Embeddings and exact cosine k-nearest-neighbour search.
//!
//! The index is a flat scan over every live vector. Vectors are stored as
//! unit-length `f32`; dot products accumulate in `f64` so that scores are
//! reproducible and ties resolve by ascending [`NodeId`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::NodeId;
use crate::text::content_words;

pub const DEFAULT_DIMENSION: usize = 256;
/// Default anchor threshold for the trigram embedder, whose vectors are sparse.
pub const DEFAULT_MIN_SIMILARITY: f64 = 0.15;
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum VectorError {
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("vector for {0} already indexed")]
    DuplicateId(NodeId),
    #[error("vector for {id} is not unit length (norm {norm})")]
    NotUnit { id: NodeId, norm: f64 },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider failed: {0}")]
    Provider(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredNode {
    pub id: NodeId,
    pub score: f64,
}

/// Produces unit vectors of a fixed dimension.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Embeds one text, enforcing the provider contract.
pub fn embed_text(text: &str, provider: &dyn Embedder) -> Result<Vec<f32>, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let mut out = provider.embed_batch(&[text])?;
    let v = out
        .pop()
        .ok_or_else(|| EmbedError::Provider("provider returned no vectors".into()))?;
    if v.len() != provider.dimension() {
        return Err(EmbedError::Provider(format!(
            "expected dimension {}, got {}",
            provider.dimension(),
            v.len()
        )));
    }
    let norm = l2_norm(&v);
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(EmbedError::Provider(format!("vector norm {norm} is not 1")));
    }
    Ok(v)
}

/// Character-trigram feature hashing with FNV-1a 64.
///
/// The text is split into content words (canonicalized, stopwords
/// dropped). Each word `w` contributes the trigrams of `<w>` plus `w`
/// itself as one extra feature. A feature adds `+1` or `-1` (bit 63 of its
/// hash set means `-1`) at `hash % d`; the sum is L2-normalized. Text with
/// no content words falls back to the raw trigrams of its lowercased form,
/// and text shorter than three code points is one gram.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dimension: usize,
}

impl TrigramEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        TrigramEmbedder { dimension }
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0i64; self.dimension];
        let mut add = |feature: &str| {
            let h = fnv1a64(feature.as_bytes());
            let slot = (h % self.dimension as u64) as usize;
            acc[slot] += if h >> 63 == 1 { -1 } else { 1 };
        };
        let words = content_words(text);
        if words.is_empty() {
            let chars: Vec<char> = text.to_lowercase().chars().collect();
            if chars.len() < 3 {
                if !chars.is_empty() {
                    add(&chars.iter().collect::<String>());
                }
            } else {
                for w in chars.windows(3) {
                    add(&w.iter().collect::<String>());
                }
            }
        } else {
            for w in &words {
                let padded: Vec<char> = format!("<{w}>").chars().collect();
                for g in padded.windows(3) {
                    add(&g.iter().collect::<String>());
                }
                add(w);
            }
        }
        let norm = acc.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Every feature cancelled out; fall back to a fixed axis.
            let mut v = vec![0.0f32; self.dimension];
            v[0] = 1.0;
            return v;
        }
        acc.iter().map(|&x| (x as f64 / norm) as f32).collect()
    }
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for TrigramEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Cosine similarity with `f64` accumulation, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Flat exact index. Slot order is irrelevant to results.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    ids: Vec<NodeId>,
    data: Vec<f32>,
    slots: HashMap<NodeId, usize>,
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        VectorIndex { dimension, ids: Vec::new(), data: Vec::new(), slots: HashMap::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.slots.contains_key(&id)
    }

    pub fn get(&self, id: NodeId) -> Option<&[f32]> {
        let slot = *self.slots.get(&id)?;
        Some(&self.data[slot * self.dimension..(slot + 1) * self.dimension])
    }

    pub fn check(&self, id: NodeId, v: &[f32]) -> Result<(), VectorError> {
        if v.len() != self.dimension {
            return Err(VectorError::DimensionMismatch { expected: self.dimension, actual: v.len() });
        }
        if self.contains(id) {
            return Err(VectorError::DuplicateId(id));
        }
        let norm = l2_norm(v);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(VectorError::NotUnit { id, norm });
        }
        Ok(())
    }

    pub fn add(&mut self, id: NodeId, v: &[f32]) -> Result<(), VectorError> {
        self.check(id, v)?;
        self.slots.insert(id, self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn remove(&mut self, id: NodeId) -> Option<Vec<f32>> {
        let slot = self.slots.remove(&id)?;
        let d = self.dimension;
        let removed = self.data[slot * d..(slot + 1) * d].to_vec();
        let last = self.ids.len() - 1;
        if slot != last {
            let moved = self.ids[last];
            self.ids.swap(slot, last);
            let (head, tail) = self.data.split_at_mut(last * d);
            head[slot * d..(slot + 1) * d].copy_from_slice(&tail[..d]);
            self.slots.insert(moved, slot);
        }
        self.ids.pop();
        self.data.truncate(last * d);
        Some(removed)
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> Vec<NodeId> {
        let mut ids = self.ids.clone();
        ids.sort_unstable();
        ids
    }

    /// Exact top-`k` by cosine, filtered by `score >= min_similarity`,
    /// sorted by score descending then id ascending.
    pub fn knn(&self, query: &[f32], k: usize, min_similarity: f64) -> Result<Vec<ScoredNode>, VectorError> {
        if query.len() != self.dimension {
            return Err(VectorError::DimensionMismatch { expected: self.dimension, actual: query.len() });
        }
        if k == 0 {
            return Err(VectorError::ZeroK);
        }
        let qnorm = l2_norm(query);
        let d = self.dimension;
        let mut hits: Vec<ScoredNode> = self
            .ids
            .iter()
            .enumerate()
            .filter_map(|(slot, &id)| {
                let row = &self.data[slot * d..(slot + 1) * d];
                let mut dot = 0.0f64;
                for (&x, &y) in query.iter().zip(row) {
                    dot += x as f64 * y as f64;
                }
                let score = if qnorm == 0.0 { 0.0 } else { (dot / qnorm).clamp(-1.0, 1.0) };
                (score >= min_similarity).then_some(ScoredNode { id, score })
            })
            .collect();
        hits.sort_unstable_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        hits.truncate(k);
        Ok(hits)
    }
}
