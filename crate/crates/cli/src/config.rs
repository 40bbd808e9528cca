//! Service configuration: an optional TOML file, then flags and `RUVA_STORE`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ruva_core::community::LeidenConfig;
use ruva_core::retrieval::RetrievalConfig;
use ruva_core::store::default_store_path;

pub const DEFAULT_BIND: &str = "127.0.0.1:7878";

/// Where a model comes from: the built-in reference or an HTTP endpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "url")]
pub enum Source {
    #[default]
    Reference,
    External(String),
}

impl Source {
    pub fn from_url(url: Option<String>) -> Source {
        url.map(Source::External).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub store_path: PathBuf,
    pub bind_address: SocketAddr,
    /// Permits a non-loopback bind address and non-loopback peers.
    pub unsafe_bind: bool,
    /// Used only when the store file is created.
    pub dimension: usize,
    pub retrieval: RetrievalConfig,
    pub embedder: Source,
    pub extractor: Source,
    pub generator: Source,
    pub captioner: Source,
    pub leiden: LeidenConfig,
    /// Fixed ingestion clock in epoch milliseconds, for reproducible stores.
    pub clock_ms: Option<i64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            store_path: default_store_path(),
            bind_address: DEFAULT_BIND.parse().expect("default bind"),
            unsafe_bind: false,
            dimension: ruva_core::vector::DEFAULT_DIMENSION,
            retrieval: RetrievalConfig::default(),
            embedder: Source::Reference,
            extractor: Source::Reference,
            generator: Source::Reference,
            captioner: Source::Reference,
            leiden: LeidenConfig::default(),
            clock_ms: None,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<ServiceConfig> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<ServiceConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        ServiceConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// The sovereignty guard: loopback only unless explicitly overridden.
    pub fn check_bind(&self) -> Result<()> {
        if !self.bind_address.ip().is_loopback() && !self.unsafe_bind {
            bail!(
                "refusing to bind {}: only loopback addresses are allowed without --unsafe-bind",
                self.bind_address
            );
        }
        Ok(())
    }
}
