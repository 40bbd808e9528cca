//! Command line and local HTTP service for the ruva knowledge graph.

pub mod app;
pub mod cli;
pub mod config;
pub mod service;
