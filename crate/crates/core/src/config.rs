//! Pipeline configuration: a single TOML file with environment-variable
//! overrides for the knobs that differ between machines.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::CoverageFormat;
use crate::metrics::RelevanceMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Live,
}

impl std::str::FromStr for BackendKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(Self::Mock),
            "live" => Ok(Self::Live),
            other => Err(ConfigError::Invalid(format!(
                "backend must be `mock` or `live`, got `{other}`"
            ))),
        }
    }
}

fn default_context_lines() -> u32 {
    10
}
fn default_top_k() -> usize {
    10
}
fn default_max_bugs() -> usize {
    3
}
fn default_model_id() -> String {
    "gpt-5-mini".into()
}
fn default_backend() -> BackendKind {
    BackendKind::Mock
}
fn default_max_output_bytes() -> usize {
    1 << 20
}
fn default_max_attempts() -> u32 {
    3
}
fn default_retry_base_ms() -> u64 {
    250
}
fn default_retry_max_ms() -> u64 {
    10_000
}
fn default_concurrency() -> usize {
    1
}
fn default_test_timeout() -> u64 {
    600
}
fn default_request_timeout() -> u64 {
    120
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("issuespecter-out")
}
fn default_relevance_mode() -> RelevanceMode {
    RelevanceMode::Binary
}

/// Everything a pipeline run needs, deserialized from one TOML file.
///
/// Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub project_name: String,
    pub source_root: PathBuf,
    pub coverage_file: PathBuf,
    pub coverage_format: CoverageFormat,
    #[serde(default = "default_context_lines")]
    pub context_lines: u32,

    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default)]
    pub seed: u64,
    /// Live chat-completion endpoint; required when `backend = "live"`.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Opaque sampling settings forwarded to the live endpoint unchanged.
    #[serde(default)]
    pub sampling: toml::value::Table,
    /// Optional JSONL fixture table (`{request_hash, response_text}` per
    /// line) preloaded into the mock backend; an audit log works as-is.
    #[serde(default)]
    pub fixtures_file: Option<PathBuf>,

    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Fixed by the prompt schema; present for visibility only.
    #[serde(default = "default_max_bugs")]
    pub max_bugs_per_segment: usize,
    #[serde(default = "default_max_output_bytes")]
    pub max_output_bytes: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
    #[serde(default = "default_retry_max_ms")]
    pub retry_max_ms: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_secs: u64,

    #[serde(default)]
    pub test_command: Option<String>,
    #[serde(default = "default_test_timeout")]
    pub test_timeout_secs: u64,

    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub enable_harness: bool,
    #[serde(default)]
    pub enable_regression_penalty: bool,
    #[serde(default = "default_relevance_mode")]
    pub relevance_mode: RelevanceMode,
    #[serde(default)]
    pub keep_artifacts: bool,
    /// Fixed RFC 3339 timestamp stamped on generated artifacts. Unset mock
    /// runs fall back to a constant so outputs stay byte-reproducible; unset
    /// live runs use the wall clock.
    #[serde(default)]
    pub timestamp: Option<String>,
}

/// Timestamp used by reproducible mock runs when none is configured.
pub const MOCK_EPOCH: &str = "2000-01-01T00:00:00Z";

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let content = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: Self = toml::from_str(&content).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.apply_env_overrides()?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.source_root);
        resolve(&mut self.coverage_file);
        resolve(&mut self.output_dir);
        if let Some(fixtures) = &mut self.fixtures_file {
            resolve(fixtures);
        }
    }

    /// `ISSUESPECTER_BACKEND`, `ISSUESPECTER_MODEL_ID`,
    /// `ISSUESPECTER_OUTPUT_DIR`, and `ISSUESPECTER_SEED` override the file;
    /// the live credential is read separately from `ISSUESPECTER_API_KEY`.
    fn apply_env_overrides(&mut self) -> Result<(), ConfigError> {
        if let Ok(backend) = std::env::var("ISSUESPECTER_BACKEND") {
            self.backend = backend.parse()?;
        }
        if let Ok(model) = std::env::var("ISSUESPECTER_MODEL_ID") {
            self.model_id = model;
        }
        if let Ok(dir) = std::env::var("ISSUESPECTER_OUTPUT_DIR") {
            self.output_dir = PathBuf::from(dir);
        }
        if let Ok(seed) = std::env::var("ISSUESPECTER_SEED") {
            self.seed = seed
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("ISSUESPECTER_SEED=`{seed}` is not an integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.project_name.trim().is_empty() {
            return Err(ConfigError::Invalid("project_name must be set".into()));
        }
        if self.top_k < 1 {
            return Err(ConfigError::Invalid("top_k must be >= 1".into()));
        }
        if self.max_bugs_per_segment != 3 {
            return Err(ConfigError::Invalid(
                "max_bugs_per_segment is fixed at 3 by the prompt schema".into(),
            ));
        }
        if self.backend == BackendKind::Live && self.endpoint.is_none() {
            return Err(ConfigError::Invalid(
                "backend = \"live\" requires `endpoint`".into(),
            ));
        }
        Ok(())
    }

    pub fn test_timeout(&self) -> Duration {
        Duration::from_secs(self.test_timeout_secs)
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs)
    }

    /// The timestamp stamped on artifacts of this run.
    pub fn effective_timestamp(&self) -> String {
        if let Some(ts) = &self.timestamp {
            return ts.clone();
        }
        match self.backend {
            BackendKind::Mock => MOCK_EPOCH.to_string(),
            BackendKind::Live => chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn sampling_json(&self) -> serde_json::Map<String, serde_json::Value> {
        let value = serde_json::to_value(&self.sampling).unwrap_or_default();
        match value {
            serde_json::Value::Object(map) => map,
            _ => serde_json::Map::new(),
        }
    }
}
