//! Deterministic offline backend.
//!
//! Lookup order: a content-addressed fixture table (request hash → canned
//! response, so a recorded audit log replays directly), then a seeded
//! synthetic generator. Synthetic output is a pure function of
//! `(seed, request)` — every request derives its own RNG stream, so results
//! do not depend on call order or concurrency.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::backend::{request_hash, BackendError, LlmBackend};
use super::{PromptRequest, TemplateId};

pub struct MockBackend {
    seed: u64,
    fixtures: HashMap<String, String>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            fixtures: HashMap::new(),
        }
    }

    /// Register a canned response keyed by raw request hash.
    pub fn with_fixture(mut self, request_hash: String, response: String) -> Self {
        self.fixtures.insert(request_hash, response);
        self
    }

    /// Register a canned response for a concrete request.
    pub fn register(&mut self, request: &PromptRequest, response: impl Into<String>) {
        self.fixtures.insert(request_hash(request), response.into());
    }

    /// Load fixtures from a JSONL file of `{request_hash, response_text}`
    /// records. Audit logs satisfy this schema, enabling replay runs.
    pub fn load_fixtures(&mut self, path: &Path) -> std::io::Result<usize> {
        #[derive(Deserialize)]
        struct FixtureRecord {
            request_hash: String,
            response_text: String,
        }
        let content = std::fs::read_to_string(path)?;
        let mut loaded = 0;
        for (lineno, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: FixtureRecord = serde_json::from_str(line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("fixture line {}: {e}", lineno + 1),
                )
            })?;
            self.fixtures.insert(record.request_hash, record.response_text);
            loaded += 1;
        }
        Ok(loaded)
    }

    pub fn fixture_count(&self) -> usize {
        self.fixtures.len()
    }

    fn rng_for(&self, request: &PromptRequest) -> ChaCha8Rng {
        let digest = Sha256::digest(request.rendered_text.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(self.seed ^ u64::from_le_bytes(bytes))
    }
}

impl LlmBackend for MockBackend {
    fn send(&self, request: &PromptRequest) -> Result<String, BackendError> {
        if let Some(canned) = self.fixtures.get(&request_hash(request)) {
            return Ok(canned.clone());
        }
        let mut rng = self.rng_for(request);
        let text = match request.template_id {
            TemplateId::BugIdentification => synth_bug_response(&mut rng),
            TemplateId::IssueRanking => synth_ranking_response(&mut rng, &request.rendered_text),
        };
        Ok(text)
    }

    fn name(&self) -> &'static str {
        "mock"
    }
}

const DEFECT_KINDS: [&str; 8] = [
    "Unchecked boundary condition",
    "Missing error propagation",
    "Unbounded buffer growth",
    "Stale cache entry reuse",
    "Unsanitized path construction",
    "Silent exception swallowing",
    "Off-by-one slice arithmetic",
    "Race on shared mutable state",
];

const COMPONENTS: [&str; 8] = [
    "response streaming loop",
    "session persistence helper",
    "argument normalization path",
    "retry scheduling logic",
    "header parsing branch",
    "config merge routine",
    "temporary file cleanup",
    "encoding fallback handler",
];

const FILLER_WORDS: [&str; 24] = [
    "the", "handler", "receives", "a", "value", "that", "bypasses", "validation", "and",
    "propagates", "into", "downstream", "state", "when", "input", "arrives", "from", "an",
    "untrusted", "source", "under", "concurrent", "load", "conditions",
];

const OS_POOL: [&str; 4] = ["linux", "windows", "macos", "freebsd"];

fn filler(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())]);
    }
    out
}

fn synth_severity(rng: &mut ChaCha8Rng) -> &'static str {
    match rng.gen_range(0..100) {
        0..=14 => "critical",
        15..=39 => "high",
        40..=69 => "medium",
        70..=89 => "low",
        _ => "very low",
    }
}

fn synth_os(rng: &mut ChaCha8Rng) -> serde_json::Value {
    if rng.gen_bool(0.6) {
        serde_json::Value::String("all".into())
    } else {
        let mut pool: Vec<&str> = OS_POOL.to_vec();
        pool.shuffle(rng);
        let take = rng.gen_range(1..=3);
        serde_json::Value::Array(
            pool.into_iter()
                .take(take)
                .map(|s| serde_json::Value::String(s.into()))
                .collect(),
        )
    }
}

fn synth_bug_response(rng: &mut ChaCha8Rng) -> String {
    let bugs = match rng.gen_range(0..100) {
        0..=9 => 0,
        10..=39 => 1,
        40..=74 => 2,
        _ => 3,
    };
    let mut entries = Vec::with_capacity(3);
    for i in 0..3 {
        if i >= bugs {
            entries.push(serde_json::json!({ "bug_found": false }));
            continue;
        }
        let kind = DEFECT_KINDS[rng.gen_range(0..DEFECT_KINDS.len())];
        let component = COMPONENTS[rng.gen_range(0..COMPONENTS.len())];
        let body_words = rng.gen_range(60..=600);
        let issue = format!(
            "## Description\n{}\n\n## Steps to reproduce\n1. Invoke the {component} with the crafted input.\n2. Observe the faulty behavior described above.\n\n## Expected behavior\n{}",
            filler(rng, body_words),
            filler(rng, 18),
        );
        let fixed_code = if rng.gen_bool(0.5) {
            Some(format!(
                "def patched_case_{i}(value):\n    if value is None:\n        raise ValueError(\"unexpected input\")\n    return value\n"
            ))
        } else {
            None
        };
        let mut entry = serde_json::json!({
            "bug_found": true,
            "title": format!("{kind} in {component}"),
            "summary": filler(rng, 14),
            "bug_severity": synth_severity(rng),
            "os": synth_os(rng),
            "generated_issue": issue,
            "inconsistent_documentation": rng.gen_bool(0.15),
        });
        if let Some(code) = fixed_code {
            entry["fixed_code"] = serde_json::Value::String(code);
        }
        entries.push(entry);
    }
    let body = serde_json::to_string_pretty(&entries).expect("entries serialize");
    if rng.gen_bool(0.25) {
        format!("```json\n{body}\n```")
    } else {
        body
    }
}

/// Pull the issue ids back out of the rendered ranking prompt so the
/// synthetic permutation references real inputs.
fn extract_issue_ids(rendered_text: &str) -> Vec<String> {
    let tail = match rendered_text.rfind("Input JSON:") {
        Some(pos) => &rendered_text[pos..],
        None => rendered_text,
    };
    let Some(start) = tail.find('[') else {
        return Vec::new();
    };
    let mut stream =
        serde_json::Deserializer::from_str(&tail[start..]).into_iter::<serde_json::Value>();
    match stream.next() {
        Some(Ok(serde_json::Value::Array(items))) => items
            .iter()
            .filter_map(|item| item["issue_id"].as_str().map(str::to_string))
            .collect(),
        _ => Vec::new(),
    }
}

fn synth_ranking_response(rng: &mut ChaCha8Rng, rendered_text: &str) -> String {
    let mut ids = extract_issue_ids(rendered_text);
    ids.shuffle(rng);
    let items: Vec<serde_json::Value> = ids
        .iter()
        .enumerate()
        .map(|(pos, id)| {
            let confidence: serde_json::Value = if rng.gen_bool(0.5) {
                serde_json::Value::String(
                    ["high", "medium", "low"][rng.gen_range(0..3)].to_string(),
                )
            } else {
                serde_json::json!(rng.gen_range(50..100) as f64 / 100.0)
            };
            serde_json::json!({
                "issue_id": id,
                "rank": (pos + 1) as u32,
                "reasoning": format!("Weighed impact, scope and urgency; {}", filler(rng, 10)),
                "validity_classification": rng.gen_bool(0.85),
                "confidence_rating": confidence,
                "validity_report": format!("## Validity assessment\n\n{}\n", filler(rng, 24)),
            })
        })
        .collect();
    let body = serde_json::to_string_pretty(&serde_json::json!({ "ranking": items }))
        .expect("ranking serializes");
    if rng.gen_bool(0.25) {
        format!("```json\n{body}\n```")
    } else {
        body
    }
}
