//! Phase orchestration: each subcommand is a library function over a
//! [`PipelineConfig`], writing its outputs atomically under the output
//! directory so a full run composes from (and resumes over) individual
//! phases.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BackendKind, ConfigError, PipelineConfig};
use crate::coverage::{self, CoverageError, SegmentStats, UncoveredSegment};
use crate::gateway::{AuditLog, Gateway, GatewayError, LiveBackend, MockBackend, RetryPolicy};
use crate::harness::{HarnessError, PatchHarness, RegressionResult, TestCommand};
use crate::issues::{self, GenerationOptions, GenerationRunSummary, IssueGenError, IssueReport};
use crate::metrics::{
    evaluate_project, GoldenAnnotation, MetricsError, MetricsReport, ProjectMetricsRow,
    RankStrategy,
};
use crate::ranking::{self, LlmRankOptions, RankedIssueList, RankingError};
use crate::report;
use crate::store;

pub const SEGMENTS_FILE: &str = "segments.json";
pub const SEGMENT_STATS_FILE: &str = "segment_stats.json";
pub const ISSUES_FILE: &str = "issues.jsonl";
pub const RUN_SUMMARY_FILE: &str = "run_summary.json";
pub const RANKING_FILE: &str = "ranking.json";
pub const REGRESSIONS_FILE: &str = "regressions.jsonl";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const REPORTS_DIR: &str = "reports";
pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const AUDIT_FILE: &str = "audit.jsonl";

/// Pipeline failures bucketed by exit-code contract: input/validation
/// problems exit 2, environment/backend problems exit 3, internal bugs 4.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Environment(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) => 2,
            Self::Environment(_) => 3,
            Self::Internal(_) => 4,
        }
    }
}

impl From<CoverageError> for PipelineError {
    fn from(err: CoverageError) -> Self {
        Self::Input(err.to_string())
    }
}

impl From<ConfigError> for PipelineError {
    fn from(err: ConfigError) -> Self {
        Self::Input(err.to_string())
    }
}

impl From<GatewayError> for PipelineError {
    fn from(err: GatewayError) -> Self {
        match err {
            GatewayError::Transport { .. }
            | GatewayError::RateLimited { .. }
            | GatewayError::BudgetExceeded { .. }
            | GatewayError::NotConfigured(_)
            | GatewayError::Audit(_) => Self::Environment(err.to_string()),
            GatewayError::EmptySegment
            | GatewayError::TooManyIssues(_)
            | GatewayError::EmptyIssueList => Self::Input(err.to_string()),
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<IssueGenError> for PipelineError {
    fn from(err: IssueGenError) -> Self {
        match err {
            IssueGenError::Storage { .. } => Self::Environment(err.to_string()),
            IssueGenError::CorruptRecord { .. } => Self::Input(err.to_string()),
            IssueGenError::EmptyOsLabels => Self::Internal(err.to_string()),
            IssueGenError::Gateway(inner) => inner.into(),
        }
    }
}

impl From<RankingError> for PipelineError {
    fn from(err: RankingError) -> Self {
        match err {
            RankingError::MissingIssue(_) => Self::Input(err.to_string()),
            RankingError::Gateway(inner) => inner.into(),
        }
    }
}

impl From<HarnessError> for PipelineError {
    fn from(err: HarnessError) -> Self {
        Self::Environment(err.to_string())
    }
}

impl From<MetricsError> for PipelineError {
    fn from(err: MetricsError) -> Self {
        Self::Input(err.to_string())
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(err: std::io::Error) -> Self {
        Self::Environment(err.to_string())
    }
}

/// Build the configured backend wrapped in retry, audit, and a clock that
/// matches the run's timestamp policy.
pub fn build_gateway(config: &PipelineConfig) -> Result<Gateway, PipelineError> {
    let backend: Box<dyn crate::gateway::LlmBackend> = match config.backend {
        BackendKind::Mock => {
            let mut mock = MockBackend::new(config.seed);
            if let Some(fixtures) = &config.fixtures_file {
                mock.load_fixtures(fixtures).map_err(|e| {
                    PipelineError::Input(format!("fixtures {}: {e}", fixtures.display()))
                })?;
            }
            Box::new(mock)
        }
        BackendKind::Live => {
            let endpoint = config
                .endpoint
                .clone()
                .ok_or_else(|| PipelineError::Input("live backend requires `endpoint`".into()))?;
            Box::new(LiveBackend::new(
                endpoint,
                config.sampling_json(),
                config.request_timeout(),
            )?)
        }
    };

    let audit = AuditLog::open(&config.output_dir.join(AUDIT_FILE))?;
    let retry = RetryPolicy {
        max_attempts: config.max_attempts,
        base_delay_ms: config.retry_base_ms,
        max_delay_ms: config.retry_max_ms,
    };
    let gateway = Gateway::new(backend).with_retry(retry).with_audit(audit);
    let gateway = if config.backend == BackendKind::Mock || config.timestamp.is_some() {
        let fixed = config.effective_timestamp();
        gateway.with_clock(move || fixed.clone())
    } else {
        gateway
    };
    Ok(gateway)
}

#[derive(Debug)]
pub struct AnalyzeOutput {
    pub segments: Vec<UncoveredSegment>,
    pub stats: SegmentStats,
}

/// Phase 1: parse coverage, extract segments, write the segment bundle and
/// stats.
pub fn cmd_analyze(config: &PipelineConfig) -> Result<AnalyzeOutput, PipelineError> {
    if !config.coverage_file.is_file() {
        return Err(PipelineError::Input(format!(
            "coverage file not found: {}",
            config.coverage_file.display()
        )));
    }
    if !config.source_root.is_dir() {
        return Err(PipelineError::Input(format!(
            "source root not found: {}",
            config.source_root.display()
        )));
    }

    let file = std::fs::File::open(&config.coverage_file)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", config.coverage_file.display())))?;
    let mut report = coverage::parse_coverage(file, config.coverage_format)?;
    if report.project_name.is_empty() {
        report.project_name = config.project_name.clone();
    }

    let segments = coverage::extract_segments(&report, &config.source_root, config.context_lines)?;
    let stats = coverage::segment_stats(&segments);

    store::write_json_atomic(&config.output_dir.join(SEGMENTS_FILE), &segments)?;
    store::write_json_atomic(&config.output_dir.join(SEGMENT_STATS_FILE), &stats)?;
    Ok(AnalyzeOutput { segments, stats })
}

fn read_segments(config: &PipelineConfig) -> Result<Vec<UncoveredSegment>, PipelineError> {
    let path = config.output_dir.join(SEGMENTS_FILE);
    let content = std::fs::read_to_string(&path).map_err(|e| {
        PipelineError::Input(format!(
            "{}: {e}; run the analyze phase first",
            path.display()
        ))
    })?;
    serde_json::from_str(&content)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

fn read_issues(config: &PipelineConfig) -> Result<Vec<IssueReport>, PipelineError> {
    let path = config.output_dir.join(ISSUES_FILE);
    if !path.is_file() {
        return Err(PipelineError::Input(format!(
            "{}: not found; run the generate phase first",
            path.display()
        )));
    }
    Ok(issues::load_issues(&path)?)
}

fn read_ranking(config: &PipelineConfig) -> Result<RankedIssueList, PipelineError> {
    let path = config.output_dir.join(RANKING_FILE);
    let content = std::fs::read_to_string(&path).map_err(|e| {
        PipelineError::Input(format!("{}: {e}; run the rank phase first", path.display()))
    })?;
    serde_json::from_str(&content)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug)]
pub struct GenerateOutput {
    pub reports: Vec<IssueReport>,
    pub summary: GenerationRunSummary,
}

/// Phase 2: prompt over all segments and persist the issue store.
pub fn cmd_generate(config: &PipelineConfig) -> Result<GenerateOutput, PipelineError> {
    let segments = read_segments(config)?;
    let gateway = build_gateway(config)?;
    let options = GenerationOptions {
        model_id: config.model_id.clone(),
        max_output_bytes: config.max_output_bytes,
        concurrency: config.concurrency,
        created_at: config.effective_timestamp(),
    };
    let (reports, summary) = issues::generate_issues(
        &segments,
        &config.project_name,
        &gateway,
        &options,
        &config.output_dir.join(ISSUES_FILE),
    )?;
    store::write_json_atomic(&config.output_dir.join(RUN_SUMMARY_FILE), &summary)?;
    Ok(GenerateOutput { reports, summary })
}

fn issue_map(reports: &[IssueReport]) -> HashMap<String, IssueReport> {
    reports
        .iter()
        .map(|r| (r.issue_id.clone(), r.clone()))
        .collect()
}

/// Evaluate candidate fixes of the rule-selected top-k and persist the
/// regression results.
pub fn cmd_harness(config: &PipelineConfig) -> Result<Vec<RegressionResult>, PipelineError> {
    let Some(template) = &config.test_command else {
        return Err(PipelineError::Input(
            "harness requires `test_command` in the config".into(),
        ));
    };
    let issues = read_issues(config)?;
    let segments = read_segments(config)?;
    let segments_by_id: HashMap<&str, &UncoveredSegment> = segments
        .iter()
        .map(|s| (s.segment_id.as_str(), s))
        .collect();

    let selected = ranking::rule_rank(&issues, config.top_k, &config.project_name);
    let by_id = issue_map(&issues);
    let harness = PatchHarness::new(TestCommand::new(template.clone()), config.test_timeout())
        .keep_artifacts(config.keep_artifacts);

    let mut results = Vec::new();
    for entry in &selected.entries {
        let issue = &by_id[&entry.issue_id];
        let segment = segments_by_id.get(issue.segment_ref.as_str()).ok_or_else(|| {
            PipelineError::Input(format!(
                "issue {} references unknown segment {}",
                issue.issue_id, issue.segment_ref
            ))
        })?;
        results.push(harness.evaluate_patch(&config.source_root, segment, issue)?);
    }
    store::write_jsonl_atomic(&config.output_dir.join(REGRESSIONS_FILE), &results)?;
    Ok(results)
}

fn load_regressions(path: &Path) -> Result<HashMap<String, RegressionResult>, PipelineError> {
    let content = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let result: RegressionResult = serde_json::from_str(line).map_err(|e| {
            PipelineError::Input(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        map.insert(result.issue_id.clone(), result);
    }
    Ok(map)
}

/// Phases 3-4: rule-select the top-k, optionally gather regression counts,
/// re-rank with the LLM, and write the ranked list carrying both orderings.
pub fn cmd_rank(config: &PipelineConfig) -> Result<RankedIssueList, PipelineError> {
    let issues = read_issues(config)?;
    let selected = ranking::rule_rank(&issues, config.top_k, &config.project_name);

    let regressions_path = config.output_dir.join(REGRESSIONS_FILE);
    let regression = if regressions_path.is_file() {
        load_regressions(&regressions_path)?
    } else if config.enable_harness && config.test_command.is_some() {
        cmd_harness(config)?
            .into_iter()
            .map(|r| (r.issue_id.clone(), r))
            .collect()
    } else {
        HashMap::new()
    };

    let gateway = build_gateway(config)?;
    let mut ranked = ranking::llm_rank(
        &selected,
        &issue_map(&issues),
        &regression,
        &gateway,
        &LlmRankOptions {
            model_id: config.model_id.clone(),
            max_output_bytes: config.max_output_bytes,
        },
    )?;
    if config.enable_regression_penalty {
        ranked = ranking::apply_regression_penalty(&ranked, &regression);
    }
    store::write_json_atomic(&config.output_dir.join(RANKING_FILE), &ranked)?;
    Ok(ranked)
}

/// Evaluate rule and (when present) LLM orderings against golden
/// annotations; write JSON and CSV tables.
pub fn cmd_eval(
    config: &PipelineConfig,
    golden_file: &Path,
) -> Result<MetricsReport, PipelineError> {
    let ranked = read_ranking(config)?;
    let golden = GoldenAnnotation::load(golden_file)?;
    if golden.project_name != ranked.project_name {
        return Err(PipelineError::Input(format!(
            "golden annotation is for project `{}`, ranking is for `{}`",
            golden.project_name, ranked.project_name
        )));
    }

    let mut rows: Vec<ProjectMetricsRow> = vec![evaluate_project(
        &ranked,
        &golden,
        RankStrategy::Rule,
        config.relevance_mode,
    )?];
    if ranked.entries.iter().all(|e| e.llm_rank.is_some()) && !ranked.entries.is_empty() {
        rows.push(evaluate_project(
            &ranked,
            &golden,
            RankStrategy::Llm,
            config.relevance_mode,
        )?);
    }

    let report = MetricsReport::new(config.relevance_mode, rows);
    store::write_json_atomic(&config.output_dir.join(METRICS_JSON_FILE), &report)?;
    store::atomic_write(
        &config.output_dir.join(METRICS_CSV_FILE),
        report.to_csv().as_bytes(),
    )?;
    Ok(report)
}

/// Emit one Markdown file per selected issue plus a ranked index.
pub fn cmd_report(config: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let ranked = read_ranking(config)?;
    let issues = issue_map(&read_issues(config)?);
    let segments = read_segments(config)?;
    let segments_by_id: HashMap<&str, &UncoveredSegment> = segments
        .iter()
        .map(|s| (s.segment_id.as_str(), s))
        .collect();

    let reports_dir = config.output_dir.join(REPORTS_DIR);
    let mut written = Vec::new();
    for entry in &ranked.entries {
        let issue = issues.get(&entry.issue_id).ok_or_else(|| {
            PipelineError::Input(format!(
                "ranked issue {} is missing from the issue store",
                entry.issue_id
            ))
        })?;
        let segment = segments_by_id.get(issue.segment_ref.as_str()).copied();
        let markdown = report::issue_markdown(entry, issue, segment);
        let path = reports_dir.join(format!("{}.md", entry.issue_id));
        store::atomic_write(&path, markdown.as_bytes())?;
        written.push(path);
    }
    let index = report::index_markdown(&ranked, &issues);
    let index_path = reports_dir.join("index.md");
    store::atomic_write(&index_path, index.as_bytes())?;
    written.push(index_path);
    Ok(written)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub name: String,
    pub skipped: bool,
    pub outputs: Vec<String>,
}

/// Machine-readable record of a full pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub project: String,
    pub backend: BackendKind,
    pub model_id: String,
    pub seed: u64,
    pub timestamp: String,
    pub segment_count: usize,
    pub issue_count: usize,
    pub selected_count: usize,
    pub phases: Vec<PhaseRecord>,
}

/// Full pipeline: analyze, generate, (harness), rank, report, manifest.
///
/// A phase whose outputs already exist in the output directory is skipped,
/// so an interrupted run resumes from its persisted stores; outputs are
/// atomic, so a crash never leaves a truncated phase output behind.
pub fn cmd_run(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    let out = &config.output_dir;
    let mut phases = Vec::new();

    let analyze_done = out.join(SEGMENTS_FILE).is_file() && out.join(SEGMENT_STATS_FILE).is_file();
    let segment_count = if analyze_done {
        read_segments(config)?.len()
    } else {
        cmd_analyze(config)?.segments.len()
    };
    phases.push(PhaseRecord {
        name: "analyze".into(),
        skipped: analyze_done,
        outputs: vec![SEGMENTS_FILE.into(), SEGMENT_STATS_FILE.into()],
    });

    let generate_done = out.join(ISSUES_FILE).is_file() && out.join(RUN_SUMMARY_FILE).is_file();
    let issue_count = if generate_done {
        read_issues(config)?.len()
    } else {
        cmd_generate(config)?.reports.len()
    };
    phases.push(PhaseRecord {
        name: "generate".into(),
        skipped: generate_done,
        outputs: vec![ISSUES_FILE.into(), RUN_SUMMARY_FILE.into(), AUDIT_FILE.into()],
    });

    let rank_done = out.join(RANKING_FILE).is_file();
    let ranked = if rank_done {
        read_ranking(config)?
    } else {
        cmd_rank(config)?
    };
    let mut rank_outputs = vec![RANKING_FILE.to_string()];
    if out.join(REGRESSIONS_FILE).is_file() {
        rank_outputs.push(REGRESSIONS_FILE.into());
    }
    phases.push(PhaseRecord {
        name: "rank".into(),
        skipped: rank_done,
        outputs: rank_outputs,
    });

    let report_done = out.join(REPORTS_DIR).join("index.md").is_file();
    if !report_done {
        cmd_report(config)?;
    }
    phases.push(PhaseRecord {
        name: "report".into(),
        skipped: report_done,
        outputs: vec![REPORTS_DIR.into()],
    });

    let manifest = RunManifest {
        project: config.project_name.clone(),
        backend: config.backend,
        model_id: config.model_id.clone(),
        seed: config.seed,
        timestamp: config.effective_timestamp(),
        segment_count,
        issue_count,
        selected_count: ranked.entries.len(),
        phases,
    };
    store::write_json_atomic(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(PipelineError::Input("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Environment("x".into()).exit_code(), 3);
        assert_eq!(PipelineError::Internal("x".into()).exit_code(), 4);
    }

    #[test]
    fn gateway_errors_map_to_environment_or_internal() {
        let transport = GatewayError::Transport {
            message: "down".into(),
            attempts: 3,
        };
        assert_eq!(PipelineError::from(transport).exit_code(), 3);
        let schema = GatewayError::SchemaViolation {
            index: None,
            message: "bad".into(),
        };
        assert_eq!(PipelineError::from(schema).exit_code(), 4);
    }
}
