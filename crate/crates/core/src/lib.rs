//! Personal knowledge graph engine: a single-file graph + vector store,
//! multimodal ingestion with entity resolution, Leiden communities, and
//! N-hop graph retrieval.

pub mod community;
pub mod eval;
pub mod extract;
pub mod fixtures;
pub mod ingest;
pub mod model;
pub mod portable;
pub mod remote;
pub mod resolve;
pub mod retrieval;
pub mod store;
pub mod text;
pub mod vector;
