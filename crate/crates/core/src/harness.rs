//! Patch regression harness: splice a candidate fix into an isolated copy of
//! the subject project, run its test suite, and count the tests that passed
//! at baseline but fail under the patch.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coverage::UncoveredSegment;
use crate::issues::IssueReport;

/// Synthetic test id used in exit-code-only mode, where the whole suite is
/// one all-or-nothing outcome.
pub const SUITE_TEST_ID: &str = "suite";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("test run exceeded {limit_secs}s and was killed")]
    Timeout {
        limit_secs: u64,
        stdout: String,
        stderr: String,
    },
    #[error("cannot parse test results: {0}")]
    ResultParse(String),
    #[error("test command not found: {0}")]
    CommandNotFound(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Outcome of one test-suite execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRunResult {
    pub passed: BTreeSet<String>,
    pub failed: BTreeSet<String>,
    pub errored: BTreeSet<String>,
    pub duration_seconds: f64,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionStatus {
    Clean,
    Regressions,
    ApplyFailed,
    RunFailed,
    NoFix,
}

/// Outcome of evaluating one candidate fix against the baseline suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub issue_id: String,
    pub applied: bool,
    pub baseline: TestRunResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patched: Option<TestRunResult>,
    pub new_failures: BTreeSet<String>,
    pub failing_test_count: usize,
    pub status: RegressionStatus,
}

/// A test command template with `{project_dir}` and `{results_file}`
/// placeholders, executed through `sh -c` in the project copy.
///
/// When the template names a `{results_file}`, per-test outcomes are parsed
/// from the JUnit-style XML the suite writes there; otherwise the run
/// degrades to exit-code-only mode with the single [`SUITE_TEST_ID`] outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCommand {
    pub template: String,
}

impl TestCommand {
    pub fn new(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
        }
    }

    fn uses_results_file(&self) -> bool {
        self.template.contains("{results_file}")
    }

    fn render(&self, project_dir: &Path, results_file: &Path) -> String {
        self.template
            .replace("{project_dir}", &project_dir.display().to_string())
            .replace("{results_file}", &results_file.display().to_string())
    }
}

/// Execute the suite in `project_copy` with a hard timeout and collect
/// per-test outcomes.
pub fn run_tests(
    project_copy: &Path,
    command: &TestCommand,
    timeout: Duration,
) -> Result<TestRunResult, HarnessError> {
    static RESULTS_COUNTER: AtomicU64 = AtomicU64::new(0);
    let results_file = std::env::temp_dir().join(format!(
        "issuespecter-results-{}-{}.xml",
        std::process::id(),
        RESULTS_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let _ = std::fs::remove_file(&results_file);

    let rendered = command.render(project_copy, &results_file);
    let started = Instant::now();
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&rendered)
        .current_dir(project_copy)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    // Own process group, so a timeout kill reaches the suite's children too
    // (otherwise grandchildren keep the output pipes open past the kill).
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let mut child = cmd.spawn()?;

    // Drain pipes on threads so a chatty suite cannot deadlock on a full pipe.
    let mut stdout_pipe = child.stdout.take().expect("stdout piped");
    let mut stderr_pipe = child.stderr.take().expect("stderr piped");
    let stdout_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stdout_pipe.read_to_string(&mut buf);
        buf
    });
    let stderr_reader = std::thread::spawn(move || {
        let mut buf = String::new();
        let _ = stderr_pipe.read_to_string(&mut buf);
        buf
    });

    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            #[cfg(unix)]
            unsafe {
                libc::kill(-(child.id() as i32), libc::SIGKILL);
            }
            let _ = child.kill();
            let _ = child.wait();
            let stdout = stdout_reader.join().unwrap_or_default();
            let stderr = stderr_reader.join().unwrap_or_default();
            let _ = std::fs::remove_file(&results_file);
            return Err(HarnessError::Timeout {
                limit_secs: timeout.as_secs(),
                stdout,
                stderr,
            });
        }
        std::thread::sleep(Duration::from_millis(10));
    };

    let duration_seconds = started.elapsed().as_secs_f64();
    let stdout = stdout_reader.join().unwrap_or_default();
    let stderr = stderr_reader.join().unwrap_or_default();
    let exit_code = status.code().unwrap_or(-1);

    // `sh` reports a missing command as exit 127.
    if exit_code == 127 {
        let _ = std::fs::remove_file(&results_file);
        return Err(HarnessError::CommandNotFound(format!(
            "{rendered} (stderr: {})",
            stderr.trim()
        )));
    }

    let result = if command.uses_results_file() {
        let content = std::fs::read_to_string(&results_file).map_err(|e| {
            HarnessError::ResultParse(format!(
                "results file {} unreadable: {e}; suite stdout: {}",
                results_file.display(),
                stdout.trim()
            ))
        })?;
        let (passed, failed, errored) = parse_junit_xml(&content)?;
        TestRunResult {
            passed,
            failed,
            errored,
            duration_seconds,
            exit_code,
        }
    } else {
        let mut result = TestRunResult {
            passed: BTreeSet::new(),
            failed: BTreeSet::new(),
            errored: BTreeSet::new(),
            duration_seconds,
            exit_code,
        };
        if exit_code == 0 {
            result.passed.insert(SUITE_TEST_ID.to_string());
        } else {
            result.failed.insert(SUITE_TEST_ID.to_string());
        }
        result
    };
    let _ = std::fs::remove_file(&results_file);
    Ok(result)
}

/// Parse JUnit-style XML into (passed, failed, errored) test id sets.
///
/// A test id is `classname::name` when a classname is present. Skipped tests
/// belong to no set.
fn parse_junit_xml(
    content: &str,
) -> Result<(BTreeSet<String>, BTreeSet<String>, BTreeSet<String>), HarnessError> {
    use quick_xml::events::Event;

    let mut reader = quick_xml::Reader::from_str(content);
    reader.config_mut().trim_text(true);

    let mut passed = BTreeSet::new();
    let mut failed = BTreeSet::new();
    let mut errored = BTreeSet::new();

    // (id, verdict) of the open testcase; verdict upgraded by child elements.
    let mut open_case: Option<(String, CaseVerdict)> = None;

    #[derive(Clone, Copy, PartialEq)]
    enum CaseVerdict {
        Passed,
        Failed,
        Errored,
        Skipped,
    }

    let case_id = |e: &quick_xml::events::BytesStart| -> Result<String, HarnessError> {
        let mut name = String::new();
        let mut classname = String::new();
        for attr in e.attributes() {
            let attr = attr.map_err(|e| HarnessError::ResultParse(e.to_string()))?;
            let value = attr
                .unescape_value()
                .map_err(|e| HarnessError::ResultParse(e.to_string()))?
                .into_owned();
            match attr.key.as_ref() {
                b"name" => name = value,
                b"classname" => classname = value,
                _ => {}
            }
        }
        if name.is_empty() {
            return Err(HarnessError::ResultParse(
                "testcase without name attribute".into(),
            ));
        }
        Ok(if classname.is_empty() {
            name
        } else {
            format!("{classname}::{name}")
        })
    };

    let close_case = |case: Option<(String, CaseVerdict)>,
                      passed: &mut BTreeSet<String>,
                      failed: &mut BTreeSet<String>,
                      errored: &mut BTreeSet<String>| {
        if let Some((id, verdict)) = case {
            match verdict {
                CaseVerdict::Passed => passed.insert(id),
                CaseVerdict::Failed => failed.insert(id),
                CaseVerdict::Errored => errored.insert(id),
                CaseVerdict::Skipped => true,
            };
        }
    };

    loop {
        match reader.read_event() {
            Ok(Event::Start(e)) | Ok(Event::Empty(e)) => match e.name().as_ref() {
                b"testcase" => {
                    // A self-closing <testcase/> emits no End event; flush
                    // any previous case when the next one opens.
                    close_case(open_case.take(), &mut passed, &mut failed, &mut errored);
                    open_case = Some((case_id(&e)?, CaseVerdict::Passed));
                }
                b"failure" => {
                    if let Some((_, verdict)) = &mut open_case {
                        *verdict = CaseVerdict::Failed;
                    }
                }
                b"error" => {
                    if let Some((_, verdict)) = &mut open_case {
                        *verdict = CaseVerdict::Errored;
                    }
                }
                b"skipped" => {
                    if let Some((_, verdict)) = &mut open_case {
                        *verdict = CaseVerdict::Skipped;
                    }
                }
                _ => {}
            },
            Ok(Event::End(e)) if e.name().as_ref() == b"testcase" => {
                close_case(open_case.take(), &mut passed, &mut failed, &mut errored);
            }
            Ok(Event::Eof) => break,
            Ok(_) => {}
            Err(e) => return Err(HarnessError::ResultParse(e.to_string())),
        }
    }
    close_case(open_case, &mut passed, &mut failed, &mut errored);
    Ok((passed, failed, errored))
}

/// Splice `fixed_code` over the segment's line range in the working copy.
///
/// The current file content at `start..=end` must match the segment body
/// byte-exactly; any drift returns `false` and leaves the copy untouched.
/// Returns `true` after a successful replacement.
pub fn apply_fix(
    project_copy: &Path,
    segment: &UncoveredSegment,
    fixed_code: &str,
) -> Result<bool, HarnessError> {
    let file_path = project_copy.join(&segment.path);
    if !file_path.is_file() {
        return Ok(false);
    }
    let content = std::fs::read_to_string(&file_path)?;

    // Locate byte offsets of the segment's line range.
    let mut line_starts = vec![0usize];
    for (i, b) in content.bytes().enumerate() {
        if b == b'\n' && i + 1 < content.len() {
            line_starts.push(i + 1);
        }
    }
    let total_lines = if content.is_empty() { 0 } else { line_starts.len() };
    let start = segment.start_line as usize;
    let end = segment.end_line as usize;
    if start == 0 || end > total_lines {
        return Ok(false);
    }
    let from = line_starts[start - 1];
    let to = if end < total_lines {
        line_starts[end]
    } else {
        content.len()
    };

    if &content[from..to] != segment.body {
        return Ok(false);
    }

    let mut replacement = fixed_code.to_string();
    // Preserve line structure: if the removed slice ended with a newline and
    // the fix does not, the next line must not be glued on.
    if content[from..to].ends_with('\n') && !replacement.ends_with('\n') && !replacement.is_empty()
    {
        replacement.push('\n');
    }

    let mut patched = String::with_capacity(content.len() + replacement.len());
    patched.push_str(&content[..from]);
    patched.push_str(&replacement);
    patched.push_str(&content[to..]);
    std::fs::write(&file_path, patched)?;
    Ok(true)
}

/// SHA-256 over sorted relative paths and file contents of a tree; used to
/// verify the original project is never mutated.
pub fn tree_checksum(root: &Path) -> std::io::Result<String> {
    let mut entries: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().to_path_buf())
        .collect();
    entries.sort();

    let mut hasher = Sha256::new();
    for path in entries {
        let rel = path.strip_prefix(root).unwrap_or(&path);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(std::fs::read(&path)?);
        hasher.update([1]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn copy_tree(src: &Path, dst: &Path) -> std::io::Result<()> {
    for entry in walkdir::WalkDir::new(src) {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry
            .path()
            .strip_prefix(src)
            .map_err(std::io::Error::other)?;
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Harness configuration plus the per-project baseline cache.
///
/// Each evaluation owns a private copy of the project; the baseline is
/// computed once per project root and reused read-only afterwards.
pub struct PatchHarness {
    command: TestCommand,
    timeout: Duration,
    keep_artifacts: bool,
    work_dir: Option<PathBuf>,
    baselines: Mutex<HashMap<PathBuf, TestRunResult>>,
}

static COPY_COUNTER: AtomicU64 = AtomicU64::new(0);

impl PatchHarness {
    pub fn new(command: TestCommand, timeout: Duration) -> Self {
        Self {
            command,
            timeout,
            keep_artifacts: false,
            work_dir: None,
            baselines: Mutex::new(HashMap::new()),
        }
    }

    /// Keep patched copies on disk after evaluation instead of deleting them.
    pub fn keep_artifacts(mut self, keep: bool) -> Self {
        self.keep_artifacts = keep;
        self
    }

    /// Directory for scratch copies; defaults to the system temp dir.
    pub fn with_work_dir(mut self, dir: PathBuf) -> Self {
        self.work_dir = Some(dir);
        self
    }

    fn scratch_dir(&self, tag: &str) -> std::io::Result<PathBuf> {
        let base = self
            .work_dir
            .clone()
            .unwrap_or_else(std::env::temp_dir);
        let dir = base.join(format!(
            "issuespecter-{tag}-{}-{}",
            std::process::id(),
            COPY_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Baseline suite outcome for a project, computed on a pristine copy the
    /// first time and cached.
    pub fn baseline(&self, project_root: &Path) -> Result<TestRunResult, HarnessError> {
        let key = project_root.to_path_buf();
        if let Some(cached) = self.baselines.lock().expect("baseline lock").get(&key) {
            return Ok(cached.clone());
        }
        let copy = self.scratch_dir("baseline")?;
        copy_tree(project_root, &copy)?;
        let result = run_tests(&copy, &self.command, self.timeout);
        if !self.keep_artifacts {
            let _ = std::fs::remove_dir_all(&copy);
        }
        let result = result?;
        self.baselines
            .lock()
            .expect("baseline lock")
            .insert(key, result.clone());
        Ok(result)
    }

    /// Apply an issue's candidate fix to a fresh copy, re-run the suite, and
    /// count regressions relative to the cached baseline.
    ///
    /// Apply and run failures surface as [`RegressionStatus`] values rather
    /// than errors so ranking can proceed over partial data.
    pub fn evaluate_patch(
        &self,
        project_root: &Path,
        segment: &UncoveredSegment,
        issue: &IssueReport,
    ) -> Result<RegressionResult, HarnessError> {
        let baseline = self.baseline(project_root)?;

        let Some(fixed_code) = &issue.fixed_code else {
            return Ok(RegressionResult {
                issue_id: issue.issue_id.clone(),
                applied: false,
                baseline,
                patched: None,
                new_failures: BTreeSet::new(),
                failing_test_count: 0,
                status: RegressionStatus::NoFix,
            });
        };

        let copy = self.scratch_dir("patch")?;
        copy_tree(project_root, &copy)?;
        let outcome = self.evaluate_in_copy(&copy, segment, issue, fixed_code, baseline);
        if !self.keep_artifacts {
            let _ = std::fs::remove_dir_all(&copy);
        }
        outcome
    }

    fn evaluate_in_copy(
        &self,
        copy: &Path,
        segment: &UncoveredSegment,
        issue: &IssueReport,
        fixed_code: &str,
        baseline: TestRunResult,
    ) -> Result<RegressionResult, HarnessError> {
        let applied = apply_fix(copy, segment, fixed_code).unwrap_or(false);
        if !applied {
            return Ok(RegressionResult {
                issue_id: issue.issue_id.clone(),
                applied: false,
                baseline,
                patched: None,
                new_failures: BTreeSet::new(),
                failing_test_count: 0,
                status: RegressionStatus::ApplyFailed,
            });
        }

        let patched = match run_tests(copy, &self.command, self.timeout) {
            Ok(result) => result,
            Err(_) => {
                return Ok(RegressionResult {
                    issue_id: issue.issue_id.clone(),
                    applied: true,
                    baseline,
                    patched: None,
                    new_failures: BTreeSet::new(),
                    failing_test_count: 0,
                    status: RegressionStatus::RunFailed,
                });
            }
        };

        // Errored tests count as failures; tests already failing at baseline
        // are excluded.
        let new_failures: BTreeSet<String> = patched
            .failed
            .union(&patched.errored)
            .filter(|id| baseline.passed.contains(*id))
            .cloned()
            .collect();
        let failing_test_count = new_failures.len();
        let status = if failing_test_count == 0 {
            RegressionStatus::Clean
        } else {
            RegressionStatus::Regressions
        };
        Ok(RegressionResult {
            issue_id: issue.issue_id.clone(),
            applied: true,
            baseline,
            patched: Some(patched),
            new_failures,
            failing_test_count,
            status,
        })
    }
}
