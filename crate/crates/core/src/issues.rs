//! Issue generation: drive the bug-identification prompt over uncovered
//! segments and normalize the entries into persistent [`IssueReport`]s.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::UncoveredSegment;
use crate::gateway::{
    parse_bug_response, render_bug_prompt, BugEntry, Gateway, GatewayError, OsField, Severity,
};
use crate::store;

#[derive(Debug, Error)]
pub enum IssueGenError {
    #[error("storage failure at {path}: {source}")]
    Storage {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt record at line {line}: {message}")]
    CorruptRecord { line: usize, message: String },
    #[error("os labels must not be empty")]
    EmptyOsLabels,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Platform breadth of an issue: everything, or a canonicalized label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OsImpact {
    All,
    Listed { labels: BTreeSet<String> },
}

impl OsImpact {
    /// Construct the listed variant; an empty label set is rejected.
    pub fn listed(labels: BTreeSet<String>) -> Result<Self, IssueGenError> {
        if labels.is_empty() {
            return Err(IssueGenError::EmptyOsLabels);
        }
        Ok(Self::Listed { labels })
    }

    /// 100 for cross-platform issues, otherwise the distinct label count.
    pub fn os_score(&self) -> u32 {
        match self {
            Self::All => 100,
            Self::Listed { labels } => labels.len() as u32,
        }
    }

    /// Canonicalize raw model output: case-fold, map synonyms, keep unknown
    /// labels verbatim. The literal "all" (any case) collapses to [`Self::All`].
    pub fn from_raw(raw: &OsField) -> Result<Self, IssueGenError> {
        match raw {
            OsField::All => Ok(Self::All),
            OsField::Listed(labels) => {
                let mut canonical = BTreeSet::new();
                for label in labels {
                    let folded = label.trim().to_lowercase();
                    if folded == "all" {
                        return Ok(Self::All);
                    }
                    canonical.insert(canonical_os_label(&folded).to_string());
                }
                Self::listed(canonical)
            }
        }
    }

    pub fn to_raw(&self) -> OsField {
        match self {
            Self::All => OsField::All,
            Self::Listed { labels } => OsField::Listed(labels.iter().cloned().collect()),
        }
    }
}

fn canonical_os_label(folded: &str) -> &str {
    match folded {
        "osx" | "os x" | "mac" | "mac os" | "mac os x" | "macosx" | "darwin" => "macos",
        "win" | "win32" | "win64" | "windows nt" => "windows",
        "gnu/linux" | "gnu linux" => "linux",
        other => other,
    }
}

/// One LLM-identified defect, normalized and ready to persist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueReport {
    pub issue_id: String,
    pub project_name: String,
    pub segment_ref: String,
    pub title: String,
    pub summary: String,
    pub severity: Severity,
    pub os_impact: OsImpact,
    pub body: String,
    pub inconsistent_documentation: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_code: Option<String>,
    pub word_count: usize,
    pub created_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy_label: Option<String>,
}

/// Number of whitespace-separated tokens in an issue body.
pub fn word_count(body: &str) -> usize {
    body.split_whitespace().count()
}

/// Aggregate counters for one generation run.
///
/// `issues_generated` counts every model-emitted entry (including explicit
/// no-bug entries); entries padded in by arity normalization are tallied in
/// `padded_entries` instead. `issues_with_bug` counts the entries that became
/// issue reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationRunSummary {
    pub segments_processed: usize,
    pub issues_generated: usize,
    pub issues_with_bug: usize,
    pub padded_entries: usize,
    pub schema_failures: usize,
    pub transport_failures: usize,
    pub severity_counts: BTreeMap<Severity, usize>,
}

/// Appended to a retried prompt after a schema violation.
const SCHEMA_REMINDER: &str =
    "\nReminder: emit only valid JSON exactly matching the requested schema, with no surrounding prose.";

/// Options controlling a generation run.
pub struct GenerationOptions {
    pub model_id: String,
    pub max_output_bytes: usize,
    /// Upper bound on simultaneously in-flight requests.
    pub concurrency: usize,
    /// `created_at` stamped on every report of the run.
    pub created_at: String,
}

enum SegmentOutcome {
    Parsed(crate::gateway::RawBugResponse),
    SchemaFailure,
    TransportFailure,
}

/// Prompt the backend once per segment (with a single schema-violation
/// retry), turn bug entries into [`IssueReport`]s, and persist them to
/// `store_path` before returning.
///
/// Per-segment schema and transport failures are recorded in the summary and
/// skipped; only storage failures abort the run.
pub fn generate_issues(
    segments: &[UncoveredSegment],
    project_name: &str,
    gateway: &Gateway,
    options: &GenerationOptions,
    store_path: &Path,
) -> Result<(Vec<IssueReport>, GenerationRunSummary), IssueGenError> {
    let outcomes = run_prompts(segments, project_name, gateway, options)?;

    let mut reports = Vec::new();
    let mut summary = GenerationRunSummary::default();
    for severity in Severity::ALL {
        summary.severity_counts.insert(severity, 0);
    }

    for (segment, outcome) in segments.iter().zip(outcomes) {
        let response = match outcome {
            SegmentOutcome::Parsed(response) => response,
            SegmentOutcome::SchemaFailure => {
                summary.schema_failures += 1;
                continue;
            }
            SegmentOutcome::TransportFailure => {
                summary.transport_failures += 1;
                continue;
            }
        };
        summary.segments_processed += 1;
        summary.padded_entries += response.padded;
        summary.issues_generated += response.entries.len() - response.padded;
        for (entry_index, entry) in response.entries.iter().enumerate() {
            let BugEntry::Bug {
                title,
                summary: entry_summary,
                severity,
                os,
                generated_issue,
                inconsistent_documentation,
                fixed_code,
            } = entry
            else {
                continue;
            };
            summary.issues_with_bug += 1;
            *summary.severity_counts.entry(*severity).or_insert(0) += 1;
            reports.push(IssueReport {
                issue_id: format!("{}-{}", segment.segment_id, entry_index),
                project_name: project_name.to_string(),
                segment_ref: segment.segment_id.clone(),
                title: title.clone(),
                summary: entry_summary.clone(),
                severity: *severity,
                os_impact: OsImpact::from_raw(os)?,
                body: generated_issue.clone(),
                inconsistent_documentation: *inconsistent_documentation,
                fixed_code: fixed_code.clone(),
                word_count: word_count(generated_issue),
                created_at: options.created_at.clone(),
                taxonomy_label: None,
            });
        }
    }

    store_issues(store_path, &reports)?;
    Ok((reports, summary))
}

/// Issue prompts with bounded concurrency, preserving segment order in the
/// returned outcomes regardless of execution schedule.
fn run_prompts(
    segments: &[UncoveredSegment],
    project_name: &str,
    gateway: &Gateway,
    options: &GenerationOptions,
) -> Result<Vec<SegmentOutcome>, IssueGenError> {
    let concurrency = options.concurrency.max(1);
    let mut outcomes: Vec<Option<SegmentOutcome>> = Vec::new();
    outcomes.resize_with(segments.len(), || None);
    let slots = Mutex::new(&mut outcomes);

    for chunk_start in (0..segments.len()).step_by(concurrency) {
        let chunk_end = (chunk_start + concurrency).min(segments.len());
        std::thread::scope(|scope| {
            for index in chunk_start..chunk_end {
                let segment = &segments[index];
                let slots = &slots;
                scope.spawn(move || {
                    let outcome = prompt_segment(segment, project_name, gateway, options);
                    slots.lock().expect("outcome lock poisoned")[index] = Some(outcome);
                });
            }
        });
    }

    Ok(outcomes
        .into_iter()
        .map(|slot| slot.expect("every segment produced an outcome"))
        .collect())
}

fn prompt_segment(
    segment: &UncoveredSegment,
    project_name: &str,
    gateway: &Gateway,
    options: &GenerationOptions,
) -> SegmentOutcome {
    let request = match render_bug_prompt(
        project_name,
        segment,
        &options.model_id,
        options.max_output_bytes,
    ) {
        Ok(request) => request,
        Err(_) => return SegmentOutcome::SchemaFailure,
    };
    let raw = match gateway.complete(&request) {
        Ok(raw) => raw,
        Err(_) => return SegmentOutcome::TransportFailure,
    };
    match parse_bug_response(&raw) {
        Ok(parsed) => SegmentOutcome::Parsed(parsed),
        Err(_) => {
            // One retry with a format reminder, then give the segment up.
            let mut retry = request.clone();
            retry.rendered_text.push_str(SCHEMA_REMINDER);
            match gateway.complete(&retry) {
                Ok(raw) => match parse_bug_response(&raw) {
                    Ok(parsed) => SegmentOutcome::Parsed(parsed),
                    Err(_) => SegmentOutcome::SchemaFailure,
                },
                Err(_) => SegmentOutcome::TransportFailure,
            }
        }
    }
}

/// Persist reports as one-JSON-object-per-line, atomically.
pub fn store_issues(path: &Path, reports: &[IssueReport]) -> Result<(), IssueGenError> {
    store::write_jsonl_atomic(path, reports).map_err(|source| IssueGenError::Storage {
        path: path.display().to_string(),
        source,
    })
}

/// Load a JSONL issue store, reporting the line number of any corrupt record.
pub fn load_issues(path: &Path) -> Result<Vec<IssueReport>, IssueGenError> {
    let content = std::fs::read_to_string(path).map_err(|source| IssueGenError::Storage {
        path: path.display().to_string(),
        source,
    })?;
    let mut reports = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let report: IssueReport =
            serde_json::from_str(line).map_err(|e| IssueGenError::CorruptRecord {
                line: lineno + 1,
                message: e.to_string(),
            })?;
        reports.push(report);
    }
    Ok(reports)
}
