//! Markdown emission: one file per selected issue plus a ranked index.

use std::collections::HashMap;

use crate::coverage::UncoveredSegment;
use crate::issues::{IssueReport, OsImpact};
use crate::ranking::{RankedEntry, RankedIssueList};

fn os_label(os: &OsImpact) -> String {
    match os {
        OsImpact::All => "all".to_string(),
        OsImpact::Listed { labels } => labels.iter().cloned().collect::<Vec<_>>().join(", "),
    }
}

fn failing_label(entry: &RankedEntry) -> String {
    match entry.failing_test_count {
        Some(n) => n.to_string(),
        None => "not verifiable".to_string(),
    }
}

/// Render the Markdown report for one selected issue.
pub fn issue_markdown(
    entry: &RankedEntry,
    issue: &IssueReport,
    segment: Option<&UncoveredSegment>,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {}\n\n", issue.title));
    out.push_str(&format!("- Issue: `{}`\n", issue.issue_id));
    out.push_str(&format!("- Project: {}\n", issue.project_name));
    out.push_str(&format!("- Severity: {}\n", issue.severity));
    out.push_str(&format!("- Operating systems: {}\n", os_label(&issue.os_impact)));
    match segment {
        Some(seg) => out.push_str(&format!(
            "- Segment: `{}` lines {}-{}\n",
            seg.path, seg.start_line, seg.end_line
        )),
        None => out.push_str(&format!("- Segment: `{}`\n", issue.segment_ref)),
    }
    out.push_str(&format!("- Rule rank: {}\n", entry.rule_rank));
    if let Some(llm) = entry.llm_rank {
        out.push_str(&format!("- LLM rank: {llm}\n"));
    }
    out.push_str(&format!("- Failing tests after fix: {}\n", failing_label(entry)));
    out.push_str(&format!("- Word count: {}\n", issue.word_count));
    if issue.inconsistent_documentation {
        out.push_str("- Documentation inconsistency: yes\n");
    }
    if let Some(label) = &issue.taxonomy_label {
        out.push_str(&format!("- Category: {label}\n"));
    }
    out.push_str(&format!("\n## Summary\n\n{}\n", issue.summary));
    out.push_str(&format!("\n## Report\n\n{}\n", issue.body));
    out.push_str("\n## Proposed fix\n\n");
    match &issue.fixed_code {
        Some(code) => {
            out.push_str("```python\n");
            out.push_str(code);
            if !code.ends_with('\n') {
                out.push('\n');
            }
            out.push_str("```\n");
        }
        None => out.push_str("None proposed.\n"),
    }
    if let Some(report) = &entry.validity_report {
        if !report.trim().is_empty() {
            out.push_str(&format!("\n## Validity assessment\n\n{}\n", report.trim_end()));
        }
    }
    out
}

/// Entries in presentation order: llm_rank when every entry has one,
/// otherwise rule_rank.
pub fn presentation_order(ranked: &RankedIssueList) -> Vec<&RankedEntry> {
    let mut entries: Vec<&RankedEntry> = ranked.entries.iter().collect();
    if entries.iter().all(|e| e.llm_rank.is_some()) {
        entries.sort_by_key(|e| e.llm_rank.unwrap());
    } else {
        entries.sort_by_key(|e| e.rule_rank);
    }
    entries
}

/// Render the ranked index over all selected issues.
pub fn index_markdown(
    ranked: &RankedIssueList,
    issues: &HashMap<String, IssueReport>,
) -> String {
    let mut out = format!("# Ranked issues: {}\n\n", ranked.project_name);
    if ranked.llm_ranking_failed {
        out.push_str("> The LLM re-rank was rejected; ordering falls back to the rule ranking.\n\n");
    }
    for (pos, entry) in presentation_order(ranked).iter().enumerate() {
        let title = issues
            .get(&entry.issue_id)
            .map(|i| i.title.as_str())
            .unwrap_or("(missing issue)");
        let severity = issues
            .get(&entry.issue_id)
            .map(|i| i.severity.to_string())
            .unwrap_or_default();
        let llm = entry
            .llm_rank
            .map(|r| format!("llm {r}"))
            .unwrap_or_else(|| "llm -".to_string());
        out.push_str(&format!(
            "{}. [{}]({}.md) — {severity}, {llm} (rule {})\n",
            pos + 1,
            title,
            entry.issue_id,
            entry.rule_rank,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Severity;

    fn issue(id: &str, fixed: Option<&str>) -> IssueReport {
        IssueReport {
            issue_id: id.into(),
            project_name: "proj".into(),
            segment_ref: "seg-abc".into(),
            title: format!("Title {id}"),
            summary: "short summary".into(),
            severity: Severity::High,
            os_impact: OsImpact::All,
            body: "full body".into(),
            inconsistent_documentation: false,
            fixed_code: fixed.map(str::to_string),
            word_count: 2,
            created_at: "2024-01-01T00:00:00Z".into(),
            taxonomy_label: None,
        }
    }

    fn entry(id: &str, rule: u32, llm: Option<u32>) -> RankedEntry {
        RankedEntry {
            issue_id: id.into(),
            rule_rank: rule,
            llm_rank: llm,
            failing_test_count: None,
            validity_classification: None,
            validity_report: None,
        }
    }

    #[test]
    fn issue_without_fix_says_none_proposed() {
        let md = issue_markdown(&entry("a", 1, None), &issue("a", None), None);
        assert!(md.contains("None proposed."));
        assert!(md.contains("not verifiable"));
    }

    #[test]
    fn issue_with_fix_gets_code_block() {
        let md = issue_markdown(&entry("a", 1, Some(2)), &issue("a", Some("x = 1")), None);
        assert!(md.contains("```python\nx = 1\n```"));
        assert!(md.contains("LLM rank: 2"));
    }

    #[test]
    fn index_orders_by_llm_rank_when_present() {
        let ranked = RankedIssueList {
            project_name: "proj".into(),
            entries: vec![entry("a", 1, Some(2)), entry("b", 2, Some(1))],
            llm_ranking_failed: false,
        };
        let issues: HashMap<String, IssueReport> = [("a", "a"), ("b", "b")]
            .iter()
            .map(|(id, _)| (id.to_string(), issue(id, None)))
            .collect();
        let md = index_markdown(&ranked, &issues);
        let pos_a = md.find("(a.md)").unwrap();
        let pos_b = md.find("(b.md)").unwrap();
        assert!(pos_b < pos_a);
    }

    #[test]
    fn index_falls_back_to_rule_rank() {
        let ranked = RankedIssueList {
            project_name: "proj".into(),
            entries: vec![entry("a", 2, None), entry("b", 1, None)],
            llm_ranking_failed: false,
        };
        let issues: HashMap<String, IssueReport> =
            [("a",), ("b",)].iter().map(|(id,)| (id.to_string(), issue(id, None))).collect();
        let md = index_markdown(&ranked, &issues);
        assert!(md.find("(b.md)").unwrap() < md.find("(a.md)").unwrap());
    }
}
