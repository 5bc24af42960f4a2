//! Provider-agnostic LLM access: the two prompt templates, strict
//! response-schema validation, retrying completion, and backends.
//!
//! Rendering fills template slots without ever rescanning payload text, so a
//! code snippet containing a brace or even a literal slot marker survives
//! byte-exactly. Parsing is tolerant on the outside (code fences, leading
//! prose) and strict on the inside (required fields, rank permutations).

mod backend;
mod mock;

pub use backend::{request_hash, AuditLog, AuditRecord, Gateway, LiveBackend, LlmBackend, RetryPolicy};
pub use mock::MockBackend;

use std::collections::BTreeSet;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::coverage::UncoveredSegment;

/// Which of the two prompt templates a request was rendered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateId {
    BugIdentification,
    IssueRanking,
}

/// A fully rendered prompt ready for a backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub template_id: TemplateId,
    pub rendered_text: String,
    pub model_id: String,
    pub max_output_bytes: usize,
    pub attempt: u32,
}

/// Five-level defect severity, ordered `Critical > ... > VeryLow`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    VeryLow,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    /// Numeric rank used by the rule ranker: critical=4 down to very-low=0.
    pub fn rank(self) -> u8 {
        match self {
            Self::Critical => 4,
            Self::High => 3,
            Self::Medium => 2,
            Self::Low => 1,
            Self::VeryLow => 0,
        }
    }

    pub const ALL: [Severity; 5] = [
        Severity::Critical,
        Severity::High,
        Severity::Medium,
        Severity::Low,
        Severity::VeryLow,
    ];

    /// Tolerant parse of severity labels as models emit them.
    pub fn parse_label(label: &str) -> Option<Self> {
        let folded: String = label
            .trim()
            .to_lowercase()
            .replace(['_', ' '], "-");
        match folded.as_str() {
            "critical" => Some(Self::Critical),
            "high" => Some(Self::High),
            "medium" | "moderate" => Some(Self::Medium),
            "low" => Some(Self::Low),
            "very-low" | "verylow" => Some(Self::VeryLow),
            _ => None,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            Self::Critical => "critical",
            Self::High => "high",
            Self::Medium => "medium",
            Self::Low => "low",
            Self::VeryLow => "very-low",
        };
        write!(f, "{label}")
    }
}

/// The `os` field as emitted by the model: the sentinel "all" or a list of
/// raw labels. Canonicalization into [`crate::issues::OsImpact`] happens
/// downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OsField {
    All,
    Listed(Vec<String>),
}

impl Serialize for OsField {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::All => serializer.serialize_str("all"),
            Self::Listed(labels) => labels.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for OsField {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        OsField::from_value(&value).map_err(D::Error::custom)
    }
}

impl OsField {
    fn from_value(value: &serde_json::Value) -> Result<Self, String> {
        match value {
            serde_json::Value::String(s) => {
                if s.trim().eq_ignore_ascii_case("all") {
                    Ok(Self::All)
                } else {
                    Ok(Self::Listed(vec![s.clone()]))
                }
            }
            serde_json::Value::Array(items) => {
                let mut labels = Vec::new();
                for item in items {
                    let s = item
                        .as_str()
                        .ok_or_else(|| "os list entries must be strings".to_string())?;
                    if s.trim().eq_ignore_ascii_case("all") {
                        return Ok(Self::All);
                    }
                    labels.push(s.to_string());
                }
                if labels.is_empty() {
                    return Err("os list must not be empty".to_string());
                }
                Ok(Self::Listed(labels))
            }
            _ => Err("os must be a string or a list of strings".to_string()),
        }
    }
}

/// One entry of a bug-identification response. The no-bug case carries no
/// defect fields by construction.
#[derive(Debug, Clone, PartialEq)]
pub enum BugEntry {
    NoBug,
    Bug {
        title: String,
        summary: String,
        severity: Severity,
        os: OsField,
        generated_issue: String,
        inconsistent_documentation: bool,
        fixed_code: Option<String>,
    },
}

impl BugEntry {
    pub fn bug_found(&self) -> bool {
        matches!(self, Self::Bug { .. })
    }
}

impl Serialize for BugEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            Self::NoBug => {
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry("bug_found", &false)?;
                map.end()
            }
            Self::Bug {
                title,
                summary,
                severity,
                os,
                generated_issue,
                inconsistent_documentation,
                fixed_code,
            } => {
                let mut map = serializer.serialize_map(None)?;
                map.serialize_entry("bug_found", &true)?;
                map.serialize_entry("title", title)?;
                map.serialize_entry("summary", summary)?;
                map.serialize_entry("bug_severity", severity)?;
                map.serialize_entry("os", os)?;
                map.serialize_entry("generated_issue", generated_issue)?;
                map.serialize_entry("inconsistent_documentation", inconsistent_documentation)?;
                if let Some(code) = fixed_code {
                    map.serialize_entry("fixed_code", code)?;
                }
                map.end()
            }
        }
    }
}

/// A normalized bug-identification response: always exactly three entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBugResponse {
    pub entries: Vec<BugEntry>,
    /// No-bug entries appended to reach arity three.
    pub padded: usize,
    /// Entries beyond the third that were dropped.
    pub discarded: usize,
}

/// One item of a ranking response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingItem {
    pub issue_id: String,
    pub rank: u32,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default)]
    pub validity_classification: Option<bool>,
    /// Text or number, kept as emitted.
    #[serde(default)]
    pub confidence_rating: Option<serde_json::Value>,
    #[serde(default)]
    pub validity_report: String,
}

/// A validated ranking response whose ranks form a permutation of `1..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRankingResponse {
    pub items: Vec<RankingItem>,
}

/// Attributes serialized into the ranking prompt for one issue.
#[derive(Debug, Clone, Serialize)]
pub struct RankingInput {
    pub issue_id: String,
    pub title: String,
    pub generated_issue: String,
    pub bug_severity: Severity,
    pub os: OsField,
    #[serde(serialize_with = "serialize_failing_count")]
    pub failing_test_count: Option<u32>,
    pub word_count: usize,
}

fn serialize_failing_count<S: Serializer>(
    count: &Option<u32>,
    serializer: S,
) -> Result<S::Ok, S::Error> {
    match count {
        Some(n) => serializer.serialize_u32(*n),
        None => serializer.serialize_str("not verifiable"),
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("segment body is empty")]
    EmptySegment,
    #[error("ranking prompt accepts at most 10 issues, got {0}")]
    TooManyIssues(usize),
    #[error("ranking prompt needs at least one issue")]
    EmptyIssueList,
    #[error("schema violation{}: {message}", index.map(|i| format!(" at entry {i}")).unwrap_or_default())]
    SchemaViolation {
        index: Option<usize>,
        message: String,
    },
    #[error("ranks are not a permutation: {0}")]
    RankNotPermutation(String),
    #[error("response references unknown issue id: {0}")]
    UnknownIssueId(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("response of {actual} bytes exceeds budget of {limit}")]
    BudgetExceeded { limit: usize, actual: usize },
    #[error("backend not configured: {0}")]
    NotConfigured(String),
    #[error("audit log io error: {0}")]
    Audit(#[from] std::io::Error),
}

impl GatewayError {
    fn schema(index: Option<usize>, message: impl Into<String>) -> Self {
        Self::SchemaViolation {
            index,
            message: message.into(),
        }
    }

    /// Violations of the response schema, retryable with a format reminder.
    pub fn is_schema_violation(&self) -> bool {
        matches!(
            self,
            Self::SchemaViolation { .. } | Self::RankNotPermutation(_) | Self::UnknownIssueId(_)
        )
    }
}

const PROJECT_SLOT: &str = "{PROJECT_NAME}";
const FILE_SLOT: &str = "{FILE_PATH}";
const LINE_SLOT: &str = "{START_LINE}";
const SNIPPET_SLOT: &str = "{CODE_SNIPPET}";
const ATTRIBUTES_SLOT: &str = "{ISSUES_ATTRIBUTES}";

pub(crate) const BUG_PROMPT_TEMPLATE: &str = "\
Role: You are an expert Python developer and test engineer. You will be provided with a Python code snippet extracted from {PROJECT_NAME}.

Task: Analyze the code, identify up to three distinct defects, and generate corresponding bug reports. In the absence of bugs, include a boolean indicator explicitly stating that no bug was found.

For each bug you identify, generate an issue report and provide an associated pull request suggestion. After completing the issue report, organize all found issues according to the precise JSON schema output. For every proposed fix, ensure the code maintains original functionality and style.

For each bug, assess its severity (very low, low, medium, high, or critical) and specify affected operating system(s). Indicate whether documentation inconsistencies are involved and propose a Python code fix when appropriate, preserving original functionality and coding style.

Input: Python code snippet to be analyzed, taken from file {FILE_PATH} with the uncovered segment starting at line {START_LINE}:
{CODE_SNIPPET}

JSON Output: A JSON array of three objects, each with a boolean indicating whether a bug is present. If a bug exists, the object includes title, summary, bug severity, OS, generated issue, a boolean for inconsistent documentation, and fixed code, ensuring consistent, parseable output. Use exactly these keys: \"bug_found\", \"title\", \"summary\", \"bug_severity\", \"os\", \"generated_issue\", \"inconsistent_documentation\", \"fixed_code\".
";

pub(crate) const RANKING_PROMPT_TEMPLATE: &str = "\
Role: You are a software engineering expert tasked with ranking up to 10 issue reports from a specified project according to urgency, scope and bug impact.

Task: Each issue includes associated attributes: bug severity, affected os, number of unit tests failing from the project test suite when the proposed Python fix is applied, and word count.

Evaluate each issue based on logical validity, alignment with best practices and documentation, and support from external technical resources, when available, and assess the issue's fit with the project's architecture and design patterns. Additionally, evaluate the impact of failed tests, noting if a proposed fix passes all tests. Rank issues in descending order of impact and urgency, with \"1\" as the highest. If required data is missing or unverifiable, clearly indicate this in the output.

JSON Output: For each ranked issue, generate a structured Markdown report under the validity report field. The final output should be a valid JSON object with the ranking of each issue, with each object containing issue id, reasoning, validity classification (a boolean to indicate if the issue is valid or not), confidence rating, and the validity report. Emit {\"ranking\": [...]} where every item uses exactly these keys: \"issue_id\", \"rank\", \"reasoning\", \"validity_classification\", \"confidence_rating\", \"validity_report\".

Input JSON: The JSON object input to process:
{ISSUES_ATTRIBUTES}
";

/// Replace one slot marker with payload text. The split happens on the
/// template side only, so payloads containing marker-shaped text are never
/// rescanned.
fn fill_slot(template: &str, marker: &str, payload: &str) -> String {
    let (head, tail) = template
        .split_once(marker)
        .unwrap_or_else(|| panic!("template slot {marker} missing"));
    let mut out = String::with_capacity(head.len() + payload.len() + tail.len());
    out.push_str(head);
    out.push_str(payload);
    out.push_str(tail);
    out
}

/// Render the bug-identification prompt for one uncovered segment.
///
/// The snippet is the verbatim concatenation of context, body, and trailing
/// context; the preamble states the source file and absolute start line.
pub fn render_bug_prompt(
    project_name: &str,
    segment: &UncoveredSegment,
    model_id: &str,
    max_output_bytes: usize,
) -> Result<PromptRequest, GatewayError> {
    if segment.body.is_empty() {
        return Err(GatewayError::EmptySegment);
    }
    let mut snippet = String::with_capacity(
        segment.context_before.len() + segment.body.len() + segment.context_after.len(),
    );
    snippet.push_str(&segment.context_before);
    snippet.push_str(&segment.body);
    snippet.push_str(&segment.context_after);

    // Fill in reverse slot order so each remaining marker's first occurrence
    // is still the template's own.
    let text = fill_slot(BUG_PROMPT_TEMPLATE, SNIPPET_SLOT, &snippet);
    let text = fill_slot(&text, LINE_SLOT, &segment.start_line.to_string());
    let text = fill_slot(&text, FILE_SLOT, &segment.path);
    let text = fill_slot(&text, PROJECT_SLOT, project_name);

    Ok(PromptRequest {
        template_id: TemplateId::BugIdentification,
        rendered_text: text,
        model_id: model_id.to_string(),
        max_output_bytes,
        attempt: 1,
    })
}

/// Render the issue-ranking prompt over at most ten issues.
pub fn render_ranking_prompt(
    issues: &[RankingInput],
    model_id: &str,
    max_output_bytes: usize,
) -> Result<PromptRequest, GatewayError> {
    if issues.is_empty() {
        return Err(GatewayError::EmptyIssueList);
    }
    if issues.len() > 10 {
        return Err(GatewayError::TooManyIssues(issues.len()));
    }
    let attributes = serde_json::to_string_pretty(issues)
        .expect("ranking inputs serialize to JSON");
    let text = fill_slot(RANKING_PROMPT_TEMPLATE, ATTRIBUTES_SLOT, &attributes);
    Ok(PromptRequest {
        template_id: TemplateId::IssueRanking,
        rendered_text: text,
        model_id: model_id.to_string(),
        max_output_bytes,
        attempt: 1,
    })
}

/// Candidate texts to scan for embedded JSON: fenced blocks first, then the
/// raw text itself.
fn json_candidates(raw: &str) -> Vec<&str> {
    let mut candidates = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // Skip an optional language tag on the fence line.
        let block_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
        let block = &after[block_start..];
        if let Some(close) = block.find("```") {
            candidates.push(&block[..close]);
            rest = &block[close + 3..];
        } else {
            break;
        }
    }
    candidates.push(raw);
    candidates
}

/// Parse the first complete JSON value that starts with one of `openers`.
fn extract_first_json(raw: &str, openers: &[char]) -> Option<serde_json::Value> {
    for candidate in json_candidates(raw) {
        for (pos, ch) in candidate.char_indices() {
            if !openers.contains(&ch) {
                continue;
            }
            let mut stream =
                serde_json::Deserializer::from_str(&candidate[pos..]).into_iter::<serde_json::Value>();
            if let Some(Ok(value)) = stream.next() {
                return Some(value);
            }
        }
    }
    None
}

fn require_str(
    entry: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    index: usize,
) -> Result<String, GatewayError> {
    match entry.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Null) | None => Err(GatewayError::schema(
            Some(index),
            format!("missing required field `{key}`"),
        )),
        Some(_) => Err(GatewayError::schema(
            Some(index),
            format!("field `{key}` must be a string"),
        )),
    }
}

fn parse_bug_entry(value: &serde_json::Value, index: usize) -> Result<BugEntry, GatewayError> {
    let entry = value
        .as_object()
        .ok_or_else(|| GatewayError::schema(Some(index), "entry is not a JSON object"))?;
    let bug_found = entry
        .get("bug_found")
        .and_then(|v| v.as_bool())
        .ok_or_else(|| GatewayError::schema(Some(index), "missing boolean `bug_found`"))?;
    if !bug_found {
        return Ok(BugEntry::NoBug);
    }

    let title = require_str(entry, "title", index)?;
    if title.trim().is_empty() {
        return Err(GatewayError::schema(Some(index), "`title` must be non-empty"));
    }
    let summary = require_str(entry, "summary", index)?;
    let severity_label = require_str(entry, "bug_severity", index)?;
    let severity = Severity::parse_label(&severity_label).ok_or_else(|| {
        GatewayError::schema(
            Some(index),
            format!("unrecognized severity `{severity_label}`"),
        )
    })?;
    let os = entry
        .get("os")
        .ok_or_else(|| GatewayError::schema(Some(index), "missing required field `os`"))
        .and_then(|v| {
            OsField::from_value(v).map_err(|msg| GatewayError::schema(Some(index), msg))
        })?;
    let generated_issue = require_str(entry, "generated_issue", index)?;
    let inconsistent_documentation = entry
        .get("inconsistent_documentation")
        .and_then(|v| v.as_bool())
        .unwrap_or(false);
    let fixed_code = match entry.get("fixed_code") {
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(serde_json::Value::Null) | None => None,
        Some(_) => {
            return Err(GatewayError::schema(
                Some(index),
                "field `fixed_code` must be a string",
            ))
        }
    };

    Ok(BugEntry::Bug {
        title,
        summary,
        severity,
        os,
        generated_issue,
        inconsistent_documentation,
        fixed_code,
    })
}

/// Tolerantly extract and validate a bug-identification response.
///
/// The first JSON array found in the text (fenced blocks are checked first)
/// is taken as the entry list. Short arrays are padded with no-bug entries to
/// exactly three; longer ones are truncated with the overflow recorded.
pub fn parse_bug_response(raw: &str) -> Result<RawBugResponse, GatewayError> {
    let value = extract_first_json(raw, &['['])
        .ok_or_else(|| GatewayError::schema(None, "no JSON array found in response"))?;
    let items = value
        .as_array()
        .expect("extractor only yields arrays for '['");

    let mut entries = Vec::with_capacity(3);
    for (index, item) in items.iter().take(3).enumerate() {
        entries.push(parse_bug_entry(item, index)?);
    }
    let discarded = items.len().saturating_sub(3);
    let padded = 3usize.saturating_sub(entries.len());
    while entries.len() < 3 {
        entries.push(BugEntry::NoBug);
    }
    Ok(RawBugResponse {
        entries,
        padded,
        discarded,
    })
}

/// Tolerantly extract and validate an issue-ranking response against the set
/// of issue ids that were put into the prompt.
pub fn parse_ranking_response(
    raw: &str,
    expected_ids: &BTreeSet<String>,
) -> Result<RawRankingResponse, GatewayError> {
    assert!(!expected_ids.is_empty(), "expected_ids must be non-empty");
    let value = extract_first_json(raw, &['{', '['])
        .ok_or_else(|| GatewayError::schema(None, "no JSON object found in response"))?;
    let items_value = match &value {
        serde_json::Value::Array(_) => value.clone(),
        serde_json::Value::Object(map) => map
            .get("ranking")
            .cloned()
            .ok_or_else(|| GatewayError::schema(None, "object lacks a `ranking` array"))?,
        _ => return Err(GatewayError::schema(None, "response is not an object or array")),
    };
    let items: Vec<RankingItem> = serde_json::from_value(items_value)
        .map_err(|e| GatewayError::schema(None, format!("ranking item malformed: {e}")))?;

    if items.len() != expected_ids.len() {
        return Err(GatewayError::schema(
            None,
            format!(
                "expected {} ranking items, got {}",
                expected_ids.len(),
                items.len()
            ),
        ));
    }
    let mut seen_ids = BTreeSet::new();
    for item in &items {
        if !expected_ids.contains(&item.issue_id) {
            return Err(GatewayError::UnknownIssueId(item.issue_id.clone()));
        }
        if !seen_ids.insert(item.issue_id.clone()) {
            return Err(GatewayError::schema(
                None,
                format!("duplicate issue id `{}`", item.issue_id),
            ));
        }
    }
    let mut ranks: Vec<u32> = items.iter().map(|i| i.rank).collect();
    ranks.sort_unstable();
    let expected_ranks: Vec<u32> = (1..=items.len() as u32).collect();
    if ranks != expected_ranks {
        return Err(GatewayError::RankNotPermutation(format!(
            "got ranks {ranks:?}, expected a permutation of 1..={}",
            items.len()
        )));
    }
    Ok(RawRankingResponse { items })
}
