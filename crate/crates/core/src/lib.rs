//! Coverage-guided issue triage for Python projects.
//!
//! The pipeline turns a coverage report into ranked, structured issue
//! reports in four phases:
//!
//! 1. [`coverage`] — extract uncovered source segments with context.
//! 2. [`issues`] — ask an LLM (via [`gateway`]) for up to three defects per
//!    segment and normalize the answers into persistent reports.
//! 3. [`ranking`] — deterministic hierarchical selection of the top-k,
//!    followed by an LLM re-rank informed by [`harness`] regression counts.
//! 4. [`metrics`] — score either ordering against golden annotations.
//!
//! [`pipeline`] wires the phases behind the CLI subcommands; everything is
//! reproducible offline through the seeded mock backend.

pub mod config;
pub mod coverage;
pub mod gateway;
pub mod harness;
pub mod issues;
pub mod metrics;
pub mod pipeline;
pub mod ranking;
pub mod report;
pub mod store;

pub use config::{BackendKind, PipelineConfig};
pub use coverage::{
    extract_segments, parse_coverage, segment_stats, CoverageFormat, CoverageReport,
    FileCoverage, SegmentStats, UncoveredSegment,
};
pub use gateway::{
    parse_bug_response, parse_ranking_response, render_bug_prompt, render_ranking_prompt,
    BugEntry, Gateway, GatewayError, MockBackend, PromptRequest, RawBugResponse,
    RawRankingResponse, Severity,
};
pub use harness::{
    apply_fix, run_tests, PatchHarness, RegressionResult, RegressionStatus, TestCommand,
    TestRunResult,
};
pub use issues::{generate_issues, load_issues, store_issues, word_count, IssueReport, OsImpact};
pub use metrics::{
    average_precision, err, evaluate_project, mean_average_precision, mrr, ndcg_at_k,
    precision_at_k, reciprocal_rank, Assessment, GoldenAnnotation, MetricsReport, RankStrategy,
    RelevanceMode,
};
pub use pipeline::PipelineError;
pub use ranking::{apply_regression_penalty, llm_rank, rule_rank, RankedIssueList, RuleScore};
