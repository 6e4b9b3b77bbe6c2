use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use cabcompare_core::mesh_index::DEFAULT_MAX_RING;
use cabcompare_core::{MeshSpec, ProviderConfig};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::geocode::GeocoderConfig;

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_max_ring() -> u32 {
    DEFAULT_MAX_RING
}

fn default_large_gap() -> f64 {
    250.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    /// Requests handled at once; further requests wait.
    pub max_concurrent_requests: usize,
    /// Longest accepted geocode query, in bytes.
    pub max_query_len: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_concurrent_requests: 512, max_query_len: 256 }
    }
}

/// Everything `serve` needs, read from one TOML file.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// index_path = "index.bin"
///
/// [provider]
/// kind = "emulator"
///
/// [geocoder]
/// kind = "stub"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub index_path: PathBuf,
    /// When set, the loaded index must have been built with this mesh.
    #[serde(default)]
    pub mesh: Option<MeshSpec>,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub geocoder: GeocoderConfig,
    #[serde(default = "default_max_ring")]
    pub max_ring: u32,
    #[serde(default = "default_large_gap")]
    pub large_gap_warning_m: f64,
    /// Answer yellow-only when the pricing provider fails instead of 502.
    #[serde(default = "default_true")]
    pub degrade_on_provider_failure: bool,
    #[serde(default)]
    pub cors_origin: Option<String>,
    #[serde(default)]
    pub limits: Limits,
}

impl ServiceConfig {
    pub fn new(index_path: PathBuf) -> Self {
        ServiceConfig {
            listen: default_listen(),
            index_path,
            mesh: None,
            provider: ProviderConfig::default(),
            geocoder: GeocoderConfig::default(),
            max_ring: default_max_ring(),
            large_gap_warning_m: default_large_gap(),
            degrade_on_provider_failure: true,
            cors_origin: None,
            limits: Limits::default(),
        }
    }

    /// Relative paths in the file resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut config: ServiceConfig =
            toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.index_path = base.join(&config.index_path);
        if let Some(p) = config.geocoder.fixture_path.as_mut() {
            *p = base.join(&*p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::Config(m));
        if !self.index_path.is_file() {
            return bad(format!("index file {} does not exist", self.index_path.display()));
        }
        if let Some(p) = &self.geocoder.fixture_path {
            if !p.is_file() {
                return bad(format!("geocoder fixture {} does not exist", p.display()));
            }
        }
        if let Some(m) = &self.mesh {
            m.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        }
        if self.max_ring == 0 {
            return bad("max_ring must be positive".into());
        }
        if !(self.large_gap_warning_m > 0.0) {
            return bad("large_gap_warning_m must be positive".into());
        }
        if self.limits.max_concurrent_requests == 0 || self.limits.max_query_len == 0 {
            return bad("limits must be positive".into());
        }
        Ok(())
    }
}
