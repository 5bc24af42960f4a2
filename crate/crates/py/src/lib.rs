//! Python bindings for the issue-triage pipeline's main types and
//! operations: coverage normalization, segment extraction, rule ranking,
//! response parsing, and the ranking-quality metrics.
//!
//! JSON-heavy structures cross the boundary as JSON strings (matching the
//! pipeline's on-disk formats); scalars and metric inputs use native Python
//! types.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use issuespecter_core::coverage;
use issuespecter_core::gateway;
use issuespecter_core::issues;
use issuespecter_core::metrics;
use issuespecter_core::ranking;

fn value_error(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// One uncovered source segment with its verbatim text and context.
#[pyclass(name = "Segment", frozen, from_py_object)]
#[derive(Clone)]
struct PySegment {
    #[pyo3(get)]
    segment_id: String,
    #[pyo3(get)]
    path: String,
    #[pyo3(get)]
    start_line: u32,
    #[pyo3(get)]
    end_line: u32,
    #[pyo3(get)]
    body: String,
    #[pyo3(get)]
    context_before: String,
    #[pyo3(get)]
    context_after: String,
    #[pyo3(get)]
    line_count: u32,
}

#[pymethods]
impl PySegment {
    fn __repr__(&self) -> String {
        format!(
            "Segment(id={:?}, path={:?}, lines={}-{})",
            self.segment_id, self.path, self.start_line, self.end_line
        )
    }
}

impl From<coverage::UncoveredSegment> for PySegment {
    fn from(segment: coverage::UncoveredSegment) -> Self {
        Self {
            segment_id: segment.segment_id,
            path: segment.path,
            start_line: segment.start_line,
            end_line: segment.end_line,
            body: segment.body,
            context_before: segment.context_before,
            context_after: segment.context_after,
            line_count: segment.line_count,
        }
    }
}

/// Line-count summary over a segment list.
#[pyclass(name = "SegmentStats", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySegmentStats {
    #[pyo3(get)]
    segment_count: usize,
    #[pyo3(get)]
    max_lines: u32,
    #[pyo3(get)]
    min_lines: u32,
    #[pyo3(get)]
    mean_lines: f64,
}

#[pymethods]
impl PySegmentStats {
    fn __repr__(&self) -> String {
        format!(
            "SegmentStats(count={}, max={}, min={}, mean={:.2})",
            self.segment_count, self.max_lines, self.min_lines, self.mean_lines
        )
    }
}

/// Parse a coverage report (`"canonical-json"` or `"lcov"`) and return it as
/// canonical JSON.
#[pyfunction]
fn normalize_coverage(text: &str, format: &str) -> PyResult<String> {
    let format: coverage::CoverageFormat = format.parse().map_err(value_error)?;
    let report = coverage::parse_coverage(Cursor::new(text), format).map_err(value_error)?;
    serde_json::to_string_pretty(&report).map_err(value_error)
}

/// Extract uncovered segments from canonical coverage JSON, slicing bodies
/// and context from the files under `source_root`.
#[pyfunction]
#[pyo3(signature = (coverage_json, source_root, context_lines = 10))]
fn extract_segments(
    coverage_json: &str,
    source_root: &str,
    context_lines: u32,
) -> PyResult<Vec<PySegment>> {
    let report = coverage::parse_coverage(
        Cursor::new(coverage_json),
        coverage::CoverageFormat::CanonicalJson,
    )
    .map_err(value_error)?;
    let segments = coverage::extract_segments(&report, Path::new(source_root), context_lines)
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(segments.into_iter().map(PySegment::from).collect())
}

/// Count, min, max, and mean line counts over segments.
#[pyfunction]
fn segment_stats(segments: Vec<PySegment>) -> PySegmentStats {
    let counts: Vec<u32> = segments.iter().map(|s| s.line_count).collect();
    if counts.is_empty() {
        return PySegmentStats {
            segment_count: 0,
            max_lines: 0,
            min_lines: 0,
            mean_lines: 0.0,
        };
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    PySegmentStats {
        segment_count: counts.len(),
        max_lines: counts.iter().copied().max().unwrap(),
        min_lines: counts.iter().copied().min().unwrap(),
        mean_lines: total as f64 / counts.len() as f64,
    }
}

/// Number of whitespace-separated tokens.
#[pyfunction]
fn word_count(text: &str) -> usize {
    issues::word_count(text)
}

/// Rank issues (JSONL issue store text) by severity, OS score, word count,
/// and generation order; returns the top-k ranked list as JSON.
#[pyfunction]
#[pyo3(signature = (issues_jsonl, k = 10, project = "project"))]
fn rule_rank(issues_jsonl: &str, k: usize, project: &str) -> PyResult<String> {
    let mut reports = Vec::new();
    for (lineno, line) in issues_jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let report: issues::IssueReport = serde_json::from_str(line)
            .map_err(|e| value_error(format!("issue line {}: {e}", lineno + 1)))?;
        reports.push(report);
    }
    let ranked = ranking::rule_rank(&reports, k, project);
    serde_json::to_string_pretty(&ranked).map_err(value_error)
}

/// Tolerantly parse a bug-identification response and return the normalized
/// three-entry array as JSON.
#[pyfunction]
fn parse_bug_response(raw: &str) -> PyResult<String> {
    let parsed = gateway::parse_bug_response(raw).map_err(value_error)?;
    serde_json::to_string_pretty(&parsed.entries).map_err(value_error)
}

/// Fraction of relevant ids among the first k, with denominator k.
#[pyfunction]
fn precision_at_k(
    ranking: Vec<String>,
    relevance: HashMap<String, bool>,
    k: usize,
) -> PyResult<f64> {
    metrics::precision_at_k(&ranking, &relevance, k).map_err(value_error)
}

/// DCG@k normalized by the ideal ordering's DCG.
#[pyfunction]
fn ndcg_at_k(ranking: Vec<String>, gains: HashMap<String, f64>, k: usize) -> PyResult<f64> {
    metrics::ndcg_at_k(&ranking, &gains, k).map_err(value_error)
}

/// Reciprocal rank of the first relevant id (0 when none).
#[pyfunction]
fn reciprocal_rank(ranking: Vec<String>, relevance: HashMap<String, bool>) -> PyResult<f64> {
    metrics::reciprocal_rank(&ranking, &relevance).map_err(value_error)
}

/// Mean reciprocal rank over (ranking, relevance) queries.
#[pyfunction]
fn mrr(queries: Vec<(Vec<String>, HashMap<String, bool>)>) -> PyResult<f64> {
    metrics::mrr(&queries).map_err(value_error)
}

/// Expected reciprocal rank under the cascade model.
#[pyfunction]
#[pyo3(signature = (ranking, gains, max_gain = 1.0))]
fn expected_reciprocal_rank(
    ranking: Vec<String>,
    gains: HashMap<String, f64>,
    max_gain: f64,
) -> PyResult<f64> {
    metrics::err(&ranking, &gains, max_gain).map_err(value_error)
}

/// Average precision for one query.
#[pyfunction]
fn average_precision(ranking: Vec<String>, relevance: HashMap<String, bool>) -> PyResult<f64> {
    metrics::average_precision(&ranking, &relevance).map_err(value_error)
}

/// Mean average precision over queries.
#[pyfunction]
fn mean_average_precision(queries: Vec<(Vec<String>, HashMap<String, bool>)>) -> PyResult<f64> {
    metrics::mean_average_precision(&queries).map_err(value_error)
}

#[pymodule]
fn issuespecter_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySegment>()?;
    m.add_class::<PySegmentStats>()?;
    m.add_function(wrap_pyfunction!(normalize_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(extract_segments, m)?)?;
    m.add_function(wrap_pyfunction!(segment_stats, m)?)?;
    m.add_function(wrap_pyfunction!(word_count, m)?)?;
    m.add_function(wrap_pyfunction!(rule_rank, m)?)?;
    m.add_function(wrap_pyfunction!(parse_bug_response, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(reciprocal_rank, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(expected_reciprocal_rank, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(mean_average_precision, m)?)?;
    Ok(())
}
