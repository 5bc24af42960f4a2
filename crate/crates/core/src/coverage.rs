//! Coverage ingestion and uncovered-segment extraction.
//!
//! A [`CoverageReport`] records, per source file, which lines are executable
//! and which of those the test suite never ran. [`extract_segments`] turns the
//! missing lines into maximal contiguous [`UncoveredSegment`]s, bridging gaps
//! that consist only of non-executable lines (comments, blanks), and slices
//! the segment body plus surrounding context verbatim from the source tree.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Coverage input formats understood by [`parse_coverage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverageFormat {
    /// The native JSON schema: `{ "project": str, "files": [...] }`.
    CanonicalJson,
    /// The `SF:` / `DA:<line>,<hits>` / `end_of_record` subset of lcov.
    Lcov,
}

impl std::str::FromStr for CoverageFormat {
    type Err = CoverageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical-json" | "json" => Ok(Self::CanonicalJson),
            "lcov" => Ok(Self::Lcov),
            other => Err(CoverageError::UnsupportedFormat(other.to_string())),
        }
    }
}

impl fmt::Display for CoverageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::CanonicalJson => write!(f, "canonical-json"),
            Self::Lcov => write!(f, "lcov"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("coverage parse error: {0}")]
    Parse(String),
    #[error("unsupported coverage format: {0}")]
    UnsupportedFormat(String),
    #[error("source file missing from disk: {0}")]
    MissingSourceFile(String),
    #[error("{path}: line {line} is beyond end of file ({file_lines} lines)")]
    LineOutOfRange {
        path: String,
        line: u32,
        file_lines: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-file line coverage, normalized from whatever producer emitted it.
///
/// Both line sets are strictly ascending and `missing_lines` is a subset of
/// `executable_lines`; [`FileCoverage::new`] enforces this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileCoverage {
    pub path: String,
    pub executable_lines: Vec<u32>,
    pub missing_lines: Vec<u32>,
}

impl FileCoverage {
    pub fn new(
        path: String,
        executable_lines: Vec<u32>,
        missing_lines: Vec<u32>,
    ) -> Result<Self, CoverageError> {
        let check_ascending = |lines: &[u32], what: &str| -> Result<(), CoverageError> {
            for pair in lines.windows(2) {
                if pair[0] >= pair[1] {
                    return Err(CoverageError::Parse(format!(
                        "{path}: {what} not strictly ascending at {}..{}",
                        pair[0], pair[1]
                    )));
                }
            }
            if lines.first().is_some_and(|&l| l == 0) {
                return Err(CoverageError::Parse(format!(
                    "{path}: {what} contains line 0; lines are 1-based"
                )));
            }
            Ok(())
        };
        check_ascending(&executable_lines, "executable_lines")?;
        check_ascending(&missing_lines, "missing_lines")?;

        let executable: BTreeSet<u32> = executable_lines.iter().copied().collect();
        if let Some(stray) = missing_lines.iter().find(|l| !executable.contains(l)) {
            return Err(CoverageError::Parse(format!(
                "{path}: missing line {stray} is not listed as executable"
            )));
        }
        Ok(Self {
            path,
            executable_lines,
            missing_lines,
        })
    }
}

/// A normalized coverage report for one project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    #[serde(rename = "project")]
    pub project_name: String,
    pub files: Vec<FileCoverage>,
}

impl CoverageReport {
    pub fn new(project_name: String, files: Vec<FileCoverage>) -> Result<Self, CoverageError> {
        let mut seen = BTreeSet::new();
        for file in &files {
            if !seen.insert(file.path.as_str()) {
                return Err(CoverageError::Parse(format!(
                    "duplicate file path in report: {}",
                    file.path
                )));
            }
        }
        Ok(Self {
            project_name,
            files,
        })
    }
}

/// A maximal run of untested source lines together with its verbatim text
/// and up to `context_lines` of surrounding source on each side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UncoveredSegment {
    pub segment_id: String,
    pub path: String,
    pub start_line: u32,
    pub end_line: u32,
    pub body: String,
    pub context_before: String,
    pub context_after: String,
    pub line_count: u32,
}

/// Stable identifier for a segment, fully determined by its location.
pub fn segment_id(path: &str, start_line: u32, end_line: u32) -> String {
    let mut hasher = Sha256::new();
    hasher.update(path.as_bytes());
    hasher.update([0]);
    hasher.update(start_line.to_le_bytes());
    hasher.update(end_line.to_le_bytes());
    let digest = hasher.finalize();
    let mut id = String::with_capacity(16);
    id.push_str("seg-");
    for byte in &digest[..6] {
        id.push_str(&format!("{byte:02x}"));
    }
    id
}

/// Line-count summary over a list of segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub segment_count: usize,
    pub max_lines: u32,
    pub min_lines: u32,
    pub mean_lines: f64,
}

/// Parse a coverage report in the declared format and normalize it.
///
/// Lines absent from the format's executed/instrumented sets never appear in
/// `executable_lines`.
pub fn parse_coverage(
    reader: impl Read,
    format: CoverageFormat,
) -> Result<CoverageReport, CoverageError> {
    match format {
        CoverageFormat::CanonicalJson => parse_canonical_json(reader),
        CoverageFormat::Lcov => parse_lcov(reader),
    }
}

fn parse_canonical_json(reader: impl Read) -> Result<CoverageReport, CoverageError> {
    #[derive(Deserialize)]
    struct RawReport {
        project: String,
        files: Vec<RawFile>,
    }
    #[derive(Deserialize)]
    struct RawFile {
        path: String,
        executable_lines: Vec<u32>,
        missing_lines: Vec<u32>,
    }

    let raw: RawReport =
        serde_json::from_reader(reader).map_err(|e| CoverageError::Parse(e.to_string()))?;
    let files = raw
        .files
        .into_iter()
        .map(|f| FileCoverage::new(f.path, f.executable_lines, f.missing_lines))
        .collect::<Result<Vec<_>, _>>()?;
    CoverageReport::new(raw.project, files)
}

fn parse_lcov(reader: impl Read) -> Result<CoverageReport, CoverageError> {
    let mut files = Vec::new();
    let mut current: Option<(String, BTreeSet<u32>, BTreeSet<u32>)> = None;

    let flush = |current: &mut Option<(String, BTreeSet<u32>, BTreeSet<u32>)>,
                 files: &mut Vec<FileCoverage>|
     -> Result<(), CoverageError> {
        if let Some((path, executable, missing)) = current.take() {
            files.push(FileCoverage::new(
                path,
                executable.into_iter().collect(),
                missing.into_iter().collect(),
            )?);
        }
        Ok(())
    };

    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        if let Some(path) = line.strip_prefix("SF:") {
            flush(&mut current, &mut files)?;
            current = Some((path.trim().to_string(), BTreeSet::new(), BTreeSet::new()));
        } else if let Some(record) = line.strip_prefix("DA:") {
            let (_, executable, missing) = current.as_mut().ok_or_else(|| {
                CoverageError::Parse(format!("line {}: DA record outside SF block", lineno + 1))
            })?;
            let mut parts = record.splitn(3, ',');
            let parse_field = |part: Option<&str>| -> Result<u64, CoverageError> {
                part.ok_or_else(|| {
                    CoverageError::Parse(format!("line {}: malformed DA record", lineno + 1))
                })?
                .trim()
                .parse()
                .map_err(|_| {
                    CoverageError::Parse(format!("line {}: malformed DA record", lineno + 1))
                })
            };
            let source_line = parse_field(parts.next())? as u32;
            let hits = parse_field(parts.next())?;
            if source_line == 0 {
                return Err(CoverageError::Parse(format!(
                    "line {}: DA line number must be >= 1",
                    lineno + 1
                )));
            }
            executable.insert(source_line);
            if hits == 0 {
                // A later duplicate DA with hits > 0 marks the line covered.
                if !missing.contains(&source_line) {
                    missing.insert(source_line);
                }
            } else {
                missing.remove(&source_line);
            }
        } else if line == "end_of_record" {
            flush(&mut current, &mut files)?;
        }
        // Other lcov record kinds (TN:, FN:, LH:, ...) are ignored.
    }
    flush(&mut current, &mut files)?;
    CoverageReport::new(String::new(), files)
}

/// Byte offsets of line starts plus total line count for one source file.
struct LineIndex<'a> {
    content: &'a str,
    starts: Vec<usize>,
}

impl<'a> LineIndex<'a> {
    fn new(content: &'a str) -> Self {
        let mut starts = Vec::new();
        if !content.is_empty() {
            starts.push(0);
            for (i, b) in content.bytes().enumerate() {
                if b == b'\n' && i + 1 < content.len() {
                    starts.push(i + 1);
                }
            }
        }
        Self { content, starts }
    }

    fn line_count(&self) -> usize {
        self.starts.len()
    }

    /// Verbatim slice spanning 1-based lines `start..=end`, including the
    /// trailing newline of `end` when the file has one.
    fn slice(&self, start: u32, end: u32) -> &'a str {
        let from = self.starts[(start - 1) as usize];
        let to = if (end as usize) < self.line_count() {
            self.starts[end as usize]
        } else {
            self.content.len()
        };
        &self.content[from..to]
    }
}

/// Extract the maximal runs of consecutive missing lines from every file of
/// the report, bridging interior gaps made up solely of non-executable lines.
///
/// Output is sorted by `(path, start_line)` and deterministic for identical
/// inputs.
pub fn extract_segments(
    report: &CoverageReport,
    source_root: &Path,
    context_lines: u32,
) -> Result<Vec<UncoveredSegment>, CoverageError> {
    let mut files: Vec<&FileCoverage> = report.files.iter().collect();
    files.sort_by(|a, b| a.path.cmp(&b.path));

    let mut segments = Vec::new();
    for file in files {
        let full_path = source_root.join(&file.path);
        if !full_path.is_file() {
            return Err(CoverageError::MissingSourceFile(file.path.clone()));
        }
        let content = std::fs::read_to_string(&full_path)?;
        let index = LineIndex::new(&content);

        if let Some(&last) = file.missing_lines.last() {
            if last as usize > index.line_count() {
                return Err(CoverageError::LineOutOfRange {
                    path: file.path.clone(),
                    line: last,
                    file_lines: index.line_count(),
                });
            }
        }

        // Covered lines are the only run breakers: a gap between two missing
        // lines survives when every intermediate line is non-executable.
        let missing: BTreeSet<u32> = file.missing_lines.iter().copied().collect();
        let covered: BTreeSet<u32> = file
            .executable_lines
            .iter()
            .copied()
            .filter(|l| !missing.contains(l))
            .collect();

        for (start, end) in missing_runs(&file.missing_lines, &covered) {
            segments.push(build_segment(&file.path, start, end, &index, context_lines));
        }
    }
    Ok(segments)
}

/// Group sorted missing lines into maximal (start, end) runs under the
/// bridging rule.
fn missing_runs(missing_lines: &[u32], covered: &BTreeSet<u32>) -> Vec<(u32, u32)> {
    let mut runs = Vec::new();
    let mut current: Option<(u32, u32)> = None;
    for &line in missing_lines {
        current = match current {
            None => Some((line, line)),
            Some((start, prev)) => {
                let blocked = covered.range(prev + 1..line).next().is_some();
                if blocked {
                    runs.push((start, prev));
                    Some((line, line))
                } else {
                    Some((start, line))
                }
            }
        };
    }
    if let Some(run) = current {
        runs.push(run);
    }
    runs
}

fn build_segment(
    path: &str,
    start: u32,
    end: u32,
    index: &LineIndex<'_>,
    context_lines: u32,
) -> UncoveredSegment {
    let body = index.slice(start, end).to_string();
    let context_before = if start > 1 {
        let from = start.saturating_sub(context_lines).max(1);
        index.slice(from, start - 1).to_string()
    } else {
        String::new()
    };
    let total = index.line_count() as u32;
    let context_after = if end < total {
        let to = (end + context_lines).min(total);
        index.slice(end + 1, to).to_string()
    } else {
        String::new()
    };
    UncoveredSegment {
        segment_id: segment_id(path, start, end),
        path: path.to_string(),
        start_line: start,
        end_line: end,
        body,
        context_before,
        context_after,
        line_count: end - start + 1,
    }
}

/// Count, min, max, and arithmetic mean of segment line counts.
pub fn segment_stats(segments: &[UncoveredSegment]) -> SegmentStats {
    if segments.is_empty() {
        return SegmentStats {
            segment_count: 0,
            max_lines: 0,
            min_lines: 0,
            mean_lines: 0.0,
        };
    }
    let counts: Vec<u32> = segments.iter().map(|s| s.line_count).collect();
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    SegmentStats {
        segment_count: counts.len(),
        max_lines: counts.iter().copied().max().unwrap(),
        min_lines: counts.iter().copied().min().unwrap(),
        mean_lines: total as f64 / counts.len() as f64,
    }
}
