//! Backend trait, retrying completion wrapper, audit log, and the live
//! HTTPS chat-completion client.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GatewayError, PromptRequest, TemplateId};

/// Environment variable holding the live-backend credential.
pub const API_KEY_ENV: &str = "ISSUESPECTER_API_KEY";

/// Content address of a prompt: SHA-256 of the rendered text.
///
/// Retries of the same prompt hash identically; the hash keys both the audit
/// log and the mock fixture table.
pub fn request_hash(request: &PromptRequest) -> String {
    let digest = Sha256::digest(request.rendered_text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// A single completion attempt. [`Gateway::complete`] layers retries, the
/// byte budget, and audit logging on top.
pub trait LlmBackend: Send + Sync {
    fn send(&self, request: &PromptRequest) -> Result<String, BackendError>;

    /// Short backend name for manifests and logs.
    fn name(&self) -> &'static str;
}

/// Raw per-attempt failure, before retry accounting.
#[derive(Debug)]
pub enum BackendError {
    Transport(String),
    RateLimited,
}

/// Bounded exponential backoff for transport and rate-limit failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 250,
            max_delay_ms: 10_000,
        }
    }
}

impl RetryPolicy {
    fn delay_for(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(16);
        Duration::from_millis((self.base_delay_ms.saturating_mul(factor)).min(self.max_delay_ms))
    }
}

/// One appended line of the request/response audit log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_hash: String,
    pub template_id: TemplateId,
    pub model_id: String,
    pub rendered_text: String,
    pub response_text: String,
    pub timestamp: String,
    pub attempt: u32,
}

/// Append-only JSONL log of completed request/response pairs.
///
/// Appends are serialized behind a mutex so concurrent callers never
/// interleave records.
pub struct AuditLog {
    writer: Mutex<BufWriter<File>>,
    path: PathBuf,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            writer: Mutex::new(BufWriter::new(file)),
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &AuditRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).expect("audit record serializes");
        let mut writer = self.writer.lock().expect("audit lock poisoned");
        writeln!(writer, "{line}")?;
        writer.flush()
    }

    /// Read all records back, e.g. to replay a recorded run.
    pub fn read(path: &Path) -> std::io::Result<Vec<AuditRecord>> {
        let content = std::fs::read_to_string(path)?;
        let mut records = Vec::new();
        for (lineno, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("audit line {}: {e}", lineno + 1),
                )
            })?;
            records.push(record);
        }
        Ok(records)
    }
}

/// A backend plus the retry policy and optional audit log applied to every
/// completion.
pub struct Gateway {
    backend: Box<dyn LlmBackend>,
    retry: RetryPolicy,
    audit: Option<AuditLog>,
    clock: Box<dyn Fn() -> String + Send + Sync>,
}

impl Gateway {
    pub fn new(backend: Box<dyn LlmBackend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            audit: None,
            clock: Box::new(|| chrono::Utc::now().to_rfc3339()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    /// Replace the audit timestamp source, e.g. with a fixed clock for
    /// reproducible runs.
    pub fn with_clock(mut self, clock: impl Fn() -> String + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    /// Complete a prompt, retrying transport and rate-limit failures with
    /// bounded exponential backoff, enforcing the response byte budget, and
    /// recording the request/response pair in the audit log.
    pub fn complete(&self, request: &PromptRequest) -> Result<String, GatewayError> {
        let mut attempt_request = request.clone();
        let mut last_rate_limited = false;
        let mut last_message = String::new();

        for attempt in 1..=self.retry.max_attempts.max(1) {
            attempt_request.attempt = attempt;
            match self.backend.send(&attempt_request) {
                Ok(text) => {
                    if text.len() > request.max_output_bytes {
                        return Err(GatewayError::BudgetExceeded {
                            limit: request.max_output_bytes,
                            actual: text.len(),
                        });
                    }
                    if let Some(audit) = &self.audit {
                        audit.append(&AuditRecord {
                            request_hash: request_hash(request),
                            template_id: request.template_id,
                            model_id: request.model_id.clone(),
                            rendered_text: request.rendered_text.clone(),
                            response_text: text.clone(),
                            timestamp: (self.clock)(),
                            attempt,
                        })?;
                    }
                    return Ok(text);
                }
                Err(BackendError::RateLimited) => {
                    last_rate_limited = true;
                }
                Err(BackendError::Transport(msg)) => {
                    last_rate_limited = false;
                    last_message = msg;
                }
            }
            if attempt < self.retry.max_attempts {
                std::thread::sleep(self.retry.delay_for(attempt));
            }
        }

        let attempts = self.retry.max_attempts.max(1);
        if last_rate_limited {
            Err(GatewayError::RateLimited { attempts })
        } else {
            Err(GatewayError::Transport {
                message: last_message,
                attempts,
            })
        }
    }
}

/// HTTPS chat-completion backend.
///
/// Sends `{"model", "messages"}` plus any configured sampling keys and reads
/// `choices[0].message.content` back. The credential comes from the
/// `ISSUESPECTER_API_KEY` environment variable.
pub struct LiveBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    sampling: serde_json::Map<String, serde_json::Value>,
}

impl LiveBackend {
    pub fn new(
        endpoint: String,
        sampling: serde_json::Map<String, serde_json::Value>,
        request_timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::NotConfigured(format!("{API_KEY_ENV} is not set")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .build()
            .map_err(|e| GatewayError::NotConfigured(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            api_key,
            sampling,
        })
    }

    /// Test constructor bypassing the environment credential.
    pub fn with_credential(
        endpoint: String,
        api_key: String,
        sampling: serde_json::Map<String, serde_json::Value>,
        request_timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .build()
            .map_err(|e| GatewayError::NotConfigured(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            api_key,
            sampling,
        })
    }
}

impl LlmBackend for LiveBackend {
    fn send(&self, request: &PromptRequest) -> Result<String, BackendError> {
        let mut body = serde_json::json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.rendered_text}],
        });
        if let serde_json::Value::Object(map) = &mut body {
            for (key, value) in &self.sampling {
                map.insert(key.clone(), value.clone());
            }
        }

        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;

        let status = response.status();
        if status.as_u16() == 429 {
            return Err(BackendError::RateLimited);
        }
        if !status.is_success() {
            return Err(BackendError::Transport(format!(
                "endpoint returned status {status}"
            )));
        }
        let payload: serde_json::Value = response
            .json()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                BackendError::Transport("response lacks choices[0].message.content".into())
            })
    }

    fn name(&self) -> &'static str {
        "live"
    }
}
