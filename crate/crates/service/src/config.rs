use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value {value:?} for {key}: {message}")]
    Env {
        key: &'static str,
        value: String,
        message: String,
    },
    #[error("max_concurrent_jobs must be at least 1")]
    ZeroWorkers,
}

/// Service settings. Loaded from an optional TOML file, then overridden by
/// `LISTEN_ADDR`, `DATA_DIR`, `MB_PATH`, `MAX_CONCURRENT_JOBS` and
/// `MAX_UPLOAD_BYTES`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen_addr: SocketAddr,
    pub data_dir: PathBuf,
    /// Material base file; the bundled one when unset.
    pub mb_path: Option<PathBuf>,
    pub max_concurrent_jobs: usize,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen_addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("carbon-tables-data"),
            mb_path: None,
            max_concurrent_jobs: 2,
            max_upload_bytes: 64 * 1024 * 1024,
        }
    }
}

impl ServiceConfig {
    pub fn load(file: Option<&Path>) -> Result<Self, ConfigError> {
        let config = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        config.with_env(|key| std::env::var(key).ok())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Applies overrides from `lookup`, usually the process environment.
    pub fn with_env(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        fn parsed<T: std::str::FromStr>(key: &'static str, value: String) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.trim().parse().map_err(|e: T::Err| ConfigError::Env {
                key,
                value: value.clone(),
                message: e.to_string(),
            })
        }
        if let Some(v) = lookup("LISTEN_ADDR") {
            self.listen_addr = parsed("LISTEN_ADDR", v)?;
        }
        if let Some(v) = lookup("DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = lookup("MB_PATH") {
            self.mb_path = if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        }
        if let Some(v) = lookup("MAX_CONCURRENT_JOBS") {
            self.max_concurrent_jobs = parsed("MAX_CONCURRENT_JOBS", v)?;
        }
        if let Some(v) = lookup("MAX_UPLOAD_BYTES") {
            self.max_upload_bytes = parsed("MAX_UPLOAD_BYTES", v)?;
        }
        if self.max_concurrent_jobs == 0 {
            return Err(ConfigError::ZeroWorkers);
        }
        Ok(self)
    }
}
