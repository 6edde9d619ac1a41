//! Server settings, read from TOML or built in code.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use align_core::adm::AdmSpec;
use align_core::backend::BackendSpec;
use serde::{Deserialize, Serialize};

use crate::ServerError;

pub const DEFAULT_JOB_THRESHOLD_MS: u64 = 2_000;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Dataset files loaded at startup. Any load failure aborts startup.
    pub datasets: Vec<PathBuf>,
    /// Directory scanned for `*.jsonl` run logs.
    pub runs_dir: Option<PathBuf>,
    /// Built web UI assets, served at `/` when set.
    pub static_dir: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    /// A decision still running after this long is turned into a job.
    pub job_threshold_ms: u64,
    /// Concurrent backend calls allowed per backend id.
    pub max_in_flight: usize,
    /// Backends offered to clients by id.
    pub backends: Vec<BackendSpec>,
    /// Named ADM presets offered to clients by id.
    pub adms: Vec<AdmSpec>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            datasets: Vec::new(),
            runs_dir: None,
            static_dir: None,
            templates: None,
            attributes: None,
            job_threshold_ms: DEFAULT_JOB_THRESHOLD_MS,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            backends: Vec::new(),
            adms: Vec::new(),
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, ServerError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServerError::Startup(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ServerError::Startup(format!("{}: {e}", path.display())))
    }
}
