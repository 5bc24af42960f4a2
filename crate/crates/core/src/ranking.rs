//! Issue selection and ranking: the deterministic hierarchical rule ranker,
//! the LLM re-ranker, and the optional regression-count demotion pass.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    parse_ranking_response, render_ranking_prompt, Gateway, GatewayError, RankingInput,
};
use crate::harness::{RegressionResult, RegressionStatus};
use crate::issues::IssueReport;

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("selected issue {0} is missing from the issue store")]
    MissingIssue(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Sort key of the rule ranker. Higher severity beats everything, then
/// broader OS impact, then longer description; generation order breaks the
/// remaining ties so the total order is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuleScore {
    pub severity_rank: u8,
    pub os_score: u32,
    pub word_count: usize,
    pub tiebreak_seq: usize,
}

impl RuleScore {
    pub fn for_issue(issue: &IssueReport, tiebreak_seq: usize) -> Self {
        Self {
            severity_rank: issue.severity.rank(),
            os_score: issue.os_impact.os_score(),
            word_count: issue.word_count,
            tiebreak_seq,
        }
    }
}

impl Ord for RuleScore {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .severity_rank
            .cmp(&self.severity_rank)
            .then(other.os_score.cmp(&self.os_score))
            .then(other.word_count.cmp(&self.word_count))
            .then(self.tiebreak_seq.cmp(&other.tiebreak_seq))
    }
}

impl PartialOrd for RuleScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One selected issue with its rank provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub issue_id: String,
    pub rule_rank: u32,
    #[serde(default)]
    pub llm_rank: Option<u32>,
    #[serde(default)]
    pub failing_test_count: Option<u32>,
    #[serde(default)]
    pub validity_classification: Option<bool>,
    #[serde(default)]
    pub validity_report: Option<String>,
}

/// The ordered top-k selection for one project. The entry order is the
/// current ranking; `rule_rank`/`llm_rank` record where each ranker placed
/// the issue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedIssueList {
    #[serde(rename = "project")]
    pub project_name: String,
    pub entries: Vec<RankedEntry>,
    /// Set when the LLM re-rank was rejected after retries.
    #[serde(default, skip_serializing_if = "is_false")]
    pub llm_ranking_failed: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Select and order the top `k` issues by (severity, OS score, word count,
/// generation order).
pub fn rule_rank(issues: &[IssueReport], k: usize, project_name: &str) -> RankedIssueList {
    let mut scored: Vec<(RuleScore, &IssueReport)> = issues
        .iter()
        .enumerate()
        .map(|(seq, issue)| (RuleScore::for_issue(issue, seq), issue))
        .collect();
    scored.sort_by(|a, b| a.0.cmp(&b.0));

    let entries = scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(pos, (_, issue))| RankedEntry {
            issue_id: issue.issue_id.clone(),
            rule_rank: (pos + 1) as u32,
            llm_rank: None,
            failing_test_count: None,
            validity_classification: None,
            validity_report: None,
        })
        .collect();
    RankedIssueList {
        project_name: project_name.to_string(),
        entries,
        llm_ranking_failed: false,
    }
}

/// Failing-test attribute for the ranking prompt: a count when the patch was
/// exercised, otherwise "not verifiable".
pub fn failing_count_for(
    issue: &IssueReport,
    regression: Option<&RegressionResult>,
) -> Option<u32> {
    if issue.fixed_code.is_none() {
        return None;
    }
    match regression {
        Some(result) => match result.status {
            RegressionStatus::Clean | RegressionStatus::Regressions => {
                Some(result.failing_test_count as u32)
            }
            _ => None,
        },
        None => None,
    }
}

/// Options for the LLM re-rank call.
pub struct LlmRankOptions {
    pub model_id: String,
    pub max_output_bytes: usize,
}

/// Re-rank the rule-selected issues with the ranking prompt.
///
/// On success every entry carries `llm_rank` (a validated permutation),
/// the validity classification, and the validity report; `rule_rank` is
/// untouched so both orderings ship side by side. A response that stays
/// malformed after one reminder retry leaves `llm_rank` absent and flags the
/// list instead of failing the run; transport errors propagate.
pub fn llm_rank(
    selected: &RankedIssueList,
    issues: &HashMap<String, IssueReport>,
    regression: &HashMap<String, RegressionResult>,
    gateway: &Gateway,
    options: &LlmRankOptions,
) -> Result<RankedIssueList, RankingError> {
    let mut ranked = selected.clone();
    if ranked.entries.is_empty() {
        return Ok(ranked);
    }

    let mut inputs = Vec::with_capacity(ranked.entries.len());
    for entry in &mut ranked.entries {
        let issue = issues
            .get(&entry.issue_id)
            .ok_or_else(|| RankingError::MissingIssue(entry.issue_id.clone()))?;
        entry.failing_test_count = failing_count_for(issue, regression.get(&entry.issue_id));
        inputs.push(RankingInput {
            issue_id: issue.issue_id.clone(),
            title: issue.title.clone(),
            generated_issue: issue.body.clone(),
            bug_severity: issue.severity,
            os: issue.os_impact.to_raw(),
            failing_test_count: entry.failing_test_count,
            word_count: issue.word_count,
        });
    }

    let request = render_ranking_prompt(&inputs, &options.model_id, options.max_output_bytes)?;
    let expected_ids: BTreeSet<String> =
        ranked.entries.iter().map(|e| e.issue_id.clone()).collect();

    let response = match gateway.complete(&request) {
        Ok(raw) => match parse_ranking_response(&raw, &expected_ids) {
            Ok(parsed) => Some(parsed),
            Err(first_err) if first_err.is_schema_violation() => {
                let mut retry = request.clone();
                retry
                    .rendered_text
                    .push_str("\nReminder: emit only valid JSON exactly matching the requested schema, with no surrounding prose.");
                match gateway.complete(&retry) {
                    Ok(raw) => parse_ranking_response(&raw, &expected_ids).ok(),
                    Err(err) => return Err(err.into()),
                }
            }
            Err(err) => return Err(err.into()),
        },
        Err(err) => return Err(err.into()),
    };

    match response {
        Some(parsed) => {
            let by_id: HashMap<&str, &crate::gateway::RankingItem> = parsed
                .items
                .iter()
                .map(|item| (item.issue_id.as_str(), item))
                .collect();
            for entry in &mut ranked.entries {
                let item = by_id[entry.issue_id.as_str()];
                entry.llm_rank = Some(item.rank);
                entry.validity_classification = item.validity_classification;
                entry.validity_report = Some(item.validity_report.clone());
            }
        }
        None => {
            ranked.llm_ranking_failed = true;
        }
    }
    Ok(ranked)
}

/// Demote regression-introducing patches: stable re-sort of the current
/// ordering by ascending failing-test count, with zero-count and
/// unverifiable entries first. Off by default in the pipeline.
pub fn apply_regression_penalty(
    selected: &RankedIssueList,
    regression: &HashMap<String, RegressionResult>,
) -> RankedIssueList {
    let mut result = selected.clone();
    // Current ordering: the llm ranking when complete, otherwise the list
    // order as produced by the rule ranker.
    if result.entries.iter().all(|e| e.llm_rank.is_some()) {
        result.entries.sort_by_key(|e| e.llm_rank.unwrap());
    }
    result.entries.sort_by_key(|entry| {
        regression
            .get(&entry.issue_id)
            .map(|r| r.failing_test_count)
            .unwrap_or(0)
    });
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, OsField, Severity};
    use crate::harness::{RegressionResult, TestRunResult};
    use crate::issues::OsImpact;

    pub(crate) fn issue(id: &str, severity: Severity, os: OsImpact, words: usize) -> IssueReport {
        let body: String = (0..words).map(|i| format!("w{i} ")).collect();
        IssueReport {
            issue_id: id.into(),
            project_name: "proj".into(),
            segment_ref: "seg".into(),
            title: format!("issue {id}"),
            summary: "s".into(),
            severity,
            os_impact: os,
            body: body.trim_end().to_string(),
            inconsistent_documentation: false,
            fixed_code: None,
            word_count: words,
            created_at: "2024-01-01T00:00:00Z".into(),
            taxonomy_label: None,
        }
    }

    fn regression(id: &str, count: usize, status: RegressionStatus) -> RegressionResult {
        let empty = TestRunResult {
            passed: Default::default(),
            failed: Default::default(),
            errored: Default::default(),
            duration_seconds: 0.0,
            exit_code: 0,
        };
        RegressionResult {
            issue_id: id.into(),
            applied: true,
            baseline: empty.clone(),
            patched: Some(empty),
            new_failures: Default::default(),
            failing_test_count: count,
            status,
        }
    }

    #[test]
    fn word_count_orders_equal_severity_and_os() {
        let issues: Vec<IssueReport> = [531, 459, 447, 444]
            .iter()
            .map(|&w| issue(&format!("i{w}"), Severity::Critical, OsImpact::All, w))
            .collect();
        let ranked = rule_rank(&issues, 10, "proj");
        let order: Vec<&str> = ranked.entries.iter().map(|e| e.issue_id.as_str()).collect();
        assert_eq!(order, vec!["i531", "i459", "i447", "i444"]);
        assert_eq!(
            ranked.entries.iter().map(|e| e.rule_rank).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn severity_dominates_os_score() {
        let critical_one_os = issue(
            "crit",
            Severity::Critical,
            OsImpact::listed(["linux".to_string()].into()).unwrap(),
            10,
        );
        let low_all_os = issue("low", Severity::Low, OsImpact::All, 9999);
        let ranked = rule_rank(&[low_all_os, critical_one_os], 2, "proj");
        assert_eq!(ranked.entries[0].issue_id, "crit");
    }

    #[test]
    fn identical_scores_preserve_generation_order() {
        let issues: Vec<IssueReport> = (0..4)
            .map(|i| issue(&format!("i{i}"), Severity::Medium, OsImpact::All, 100))
            .collect();
        let ranked = rule_rank(&issues, 4, "proj");
        let order: Vec<&str> = ranked.entries.iter().map(|e| e.issue_id.as_str()).collect();
        assert_eq!(order, vec!["i0", "i1", "i2", "i3"]);
    }

    #[test]
    fn top_k_truncates() {
        let issues: Vec<IssueReport> = (0..15)
            .map(|i| issue(&format!("i{i}"), Severity::High, OsImpact::All, 100 + i))
            .collect();
        let ranked = rule_rank(&issues, 10, "proj");
        assert_eq!(ranked.entries.len(), 10);
        assert_eq!(ranked.entries[0].issue_id, "i14");
    }

    fn as_map(issues: &[IssueReport]) -> HashMap<String, IssueReport> {
        issues
            .iter()
            .map(|i| (i.issue_id.clone(), i.clone()))
            .collect()
    }

    #[test]
    fn llm_rank_echo_fixture_reproduces_rule_order() {
        let issues: Vec<IssueReport> = (0..3)
            .map(|i| issue(&format!("i{i}"), Severity::High, OsImpact::All, 300 - i))
            .collect();
        let ranked = rule_rank(&issues, 3, "proj");

        // Build the exact request llm_rank will send and can it with an
        // echo-the-rule-order response.
        let inputs: Vec<RankingInput> = ranked
            .entries
            .iter()
            .map(|e| {
                let iss = issues.iter().find(|i| i.issue_id == e.issue_id).unwrap();
                RankingInput {
                    issue_id: iss.issue_id.clone(),
                    title: iss.title.clone(),
                    generated_issue: iss.body.clone(),
                    bug_severity: iss.severity,
                    os: OsField::All,
                    failing_test_count: None,
                    word_count: iss.word_count,
                }
            })
            .collect();
        let request = render_ranking_prompt(&inputs, "mock-model", 1 << 20).unwrap();
        let echo: Vec<serde_json::Value> = ranked
            .entries
            .iter()
            .map(|e| {
                serde_json::json!({
                    "issue_id": e.issue_id,
                    "rank": e.rule_rank,
                    "reasoning": "echo",
                    "validity_classification": true,
                    "confidence_rating": "high",
                    "validity_report": "## ok"
                })
            })
            .collect();
        let mut backend = MockBackend::new(0);
        backend.register(
            &request,
            serde_json::to_string(&serde_json::json!({ "ranking": echo })).unwrap(),
        );
        let gateway = Gateway::new(Box::new(backend));

        let reranked = llm_rank(
            &ranked,
            &as_map(&issues),
            &HashMap::new(),
            &gateway,
            &LlmRankOptions {
                model_id: "mock-model".into(),
                max_output_bytes: 1 << 20,
            },
        )
        .unwrap();
        for entry in &reranked.entries {
            assert_eq!(entry.llm_rank, Some(entry.rule_rank));
            assert_eq!(entry.validity_classification, Some(true));
        }
        assert!(!reranked.llm_ranking_failed);
    }

    #[test]
    fn llm_rank_single_issue_gets_rank_one() {
        let issues = vec![issue("solo", Severity::Low, OsImpact::All, 12)];
        let ranked = rule_rank(&issues, 10, "proj");
        let gateway = Gateway::new(Box::new(MockBackend::new(42)));
        let reranked = llm_rank(
            &ranked,
            &as_map(&issues),
            &HashMap::new(),
            &gateway,
            &LlmRankOptions {
                model_id: "mock-model".into(),
                max_output_bytes: 1 << 20,
            },
        )
        .unwrap();
        assert_eq!(reranked.entries[0].llm_rank, Some(1));
    }

    #[test]
    fn llm_rank_failure_flags_list_and_keeps_rule_rank() {
        let issues: Vec<IssueReport> = (0..2)
            .map(|i| issue(&format!("i{i}"), Severity::High, OsImpact::All, 50 + i))
            .collect();
        let ranked = rule_rank(&issues, 2, "proj");
        // Register garbage for both the initial request and the retry by
        // hashing them after construction.
        let inputs: Vec<RankingInput> = ranked
            .entries
            .iter()
            .map(|e| {
                let iss = issues.iter().find(|i| i.issue_id == e.issue_id).unwrap();
                RankingInput {
                    issue_id: iss.issue_id.clone(),
                    title: iss.title.clone(),
                    generated_issue: iss.body.clone(),
                    bug_severity: iss.severity,
                    os: OsField::All,
                    failing_test_count: None,
                    word_count: iss.word_count,
                }
            })
            .collect();
        let request = render_ranking_prompt(&inputs, "mock-model", 1 << 20).unwrap();
        let mut retry = request.clone();
        retry
            .rendered_text
            .push_str("\nReminder: emit only valid JSON exactly matching the requested schema, with no surrounding prose.");
        let mut backend = MockBackend::new(0);
        backend.register(&request, "no json");
        backend.register(&retry, "still no json");
        let gateway = Gateway::new(Box::new(backend));

        let reranked = llm_rank(
            &ranked,
            &as_map(&issues),
            &HashMap::new(),
            &gateway,
            &LlmRankOptions {
                model_id: "mock-model".into(),
                max_output_bytes: 1 << 20,
            },
        )
        .unwrap();
        assert!(reranked.llm_ranking_failed);
        assert!(reranked.entries.iter().all(|e| e.llm_rank.is_none()));
        assert_eq!(reranked.entries[0].rule_rank, 1);
    }

    #[test]
    fn penalty_moves_regression_patches_down() {
        let issues: Vec<IssueReport> = (0..3)
            .map(|i| issue(&format!("i{i}"), Severity::High, OsImpact::All, 100 - i))
            .collect();
        let ranked = rule_rank(&issues, 3, "proj");
        let regression: HashMap<String, RegressionResult> = [
            ("i0", 0usize),
            ("i1", 2),
            ("i2", 0),
        ]
        .iter()
        .map(|(id, n)| {
            (
                id.to_string(),
                regression(id, *n, if *n == 0 { RegressionStatus::Clean } else { RegressionStatus::Regressions }),
            )
        })
        .collect();
        let adjusted = apply_regression_penalty(&ranked, &regression);
        let order: Vec<&str> = adjusted.entries.iter().map(|e| e.issue_id.as_str()).collect();
        assert_eq!(order, vec!["i0", "i2", "i1"]);
    }

    #[test]
    fn penalty_with_all_clean_is_identity() {
        let issues: Vec<IssueReport> = (0..3)
            .map(|i| issue(&format!("i{i}"), Severity::High, OsImpact::All, 100 - i))
            .collect();
        let ranked = rule_rank(&issues, 3, "proj");
        let adjusted = apply_regression_penalty(&ranked, &HashMap::new());
        assert_eq!(adjusted.entries, ranked.entries);
    }

    #[test]
    fn penalty_orders_by_ascending_count() {
        let issues: Vec<IssueReport> = (0..2)
            .map(|i| issue(&format!("i{i}"), Severity::High, OsImpact::All, 100 - i))
            .collect();
        let ranked = rule_rank(&issues, 2, "proj");
        let regression: HashMap<String, RegressionResult> = [("i0", 5usize), ("i1", 1)]
            .iter()
            .map(|(id, n)| (id.to_string(), regression(id, *n, RegressionStatus::Regressions)))
            .collect();
        let adjusted = apply_regression_penalty(&ranked, &regression);
        let order: Vec<&str> = adjusted.entries.iter().map(|e| e.issue_id.as_str()).collect();
        assert_eq!(order, vec!["i1", "i0"]);
    }
}
