//! Ranking-quality metrics (P@k, NDCG@k, MRR, ERR, MAP) evaluated against
//! golden annotations, for both the rule-based and the LLM orderings.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranking::RankedIssueList;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ranking references id with no relevance judgement: {0}")]
    UnknownId(String),
    #[error("golden annotation mismatch: {0}")]
    GoldenMismatch(String),
    #[error("invalid golden annotation: {0}")]
    InvalidGolden(String),
    #[error("ranked list has no llm ranks; run the rank phase with an LLM re-rank first")]
    MissingLlmRank,
}

/// Human ground-truth label for one issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assessment {
    Valid,
    Investigate,
    Invalid,
}

impl Assessment {
    /// Binary relevance: valid or worth investigating counts as relevant.
    pub fn is_relevant(self) -> bool {
        !matches!(self, Self::Invalid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenIssue {
    pub issue_id: String,
    pub assessment: Assessment,
    pub golden_rank: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy_label: Option<String>,
}

/// Ground truth for one project: assessments plus a golden priority
/// permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenAnnotation {
    #[serde(rename = "project")]
    pub project_name: String,
    pub issues: Vec<GoldenIssue>,
}

impl GoldenAnnotation {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let mut ranks: Vec<u32> = self.issues.iter().map(|i| i.golden_rank).collect();
        ranks.sort_unstable();
        let expected: Vec<u32> = (1..=self.issues.len() as u32).collect();
        if ranks != expected {
            return Err(MetricsError::InvalidGolden(format!(
                "golden ranks {ranks:?} are not a permutation of 1..={}",
                self.issues.len()
            )));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, MetricsError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| MetricsError::InvalidGolden(format!("{}: {e}", path.display())))?;
        let golden: Self = serde_json::from_str(&content)
            .map_err(|e| MetricsError::InvalidGolden(format!("{}: {e}", path.display())))?;
        golden.validate()?;
        Ok(golden)
    }
}

/// Fraction of relevant items among the first `k` ranked results, with a
/// fixed denominator of `k`.
pub fn precision_at_k(
    ranking: &[String],
    relevance: &HashMap<String, bool>,
    k: usize,
) -> Result<f64, MetricsError> {
    assert!(k >= 1, "k must be >= 1");
    let mut hits = 0usize;
    for id in ranking.iter().take(k) {
        let relevant = relevance
            .get(id)
            .ok_or_else(|| MetricsError::UnknownId(id.clone()))?;
        if *relevant {
            hits += 1;
        }
    }
    Ok(hits as f64 / k as f64)
}

fn dcg(gains_in_order: &[f64], k: usize) -> f64 {
    gains_in_order
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, gain)| gain / ((i + 2) as f64).log2())
        .sum()
}

/// DCG@k normalized by the DCG of the ideal (gain-descending) ordering.
/// Defined as 0 when no item has positive gain.
pub fn ndcg_at_k(
    ranking: &[String],
    gains: &HashMap<String, f64>,
    k: usize,
) -> Result<f64, MetricsError> {
    assert!(k >= 1, "k must be >= 1");
    let ranked_gains: Vec<f64> = ranking
        .iter()
        .map(|id| {
            gains
                .get(id)
                .copied()
                .ok_or_else(|| MetricsError::UnknownId(id.clone()))
        })
        .collect::<Result<_, _>>()?;

    let mut ideal: Vec<f64> = gains.values().copied().collect();
    ideal.sort_by(|a, b| b.partial_cmp(a).expect("gains are finite"));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg(&ranked_gains, k) / idcg)
}

/// Reciprocal rank of the first relevant item; 0 when none is relevant.
pub fn reciprocal_rank(
    ranking: &[String],
    relevance: &HashMap<String, bool>,
) -> Result<f64, MetricsError> {
    for (pos, id) in ranking.iter().enumerate() {
        let relevant = relevance
            .get(id)
            .ok_or_else(|| MetricsError::UnknownId(id.clone()))?;
        if *relevant {
            return Ok(1.0 / (pos + 1) as f64);
        }
    }
    Ok(0.0)
}

/// Mean reciprocal rank over queries; a query without relevant items
/// contributes 0.
pub fn mrr(queries: &[(Vec<String>, HashMap<String, bool>)]) -> Result<f64, MetricsError> {
    if queries.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (ranking, relevance) in queries {
        sum += reciprocal_rank(ranking, relevance)?;
    }
    Ok(sum / queries.len() as f64)
}

/// Expected reciprocal rank under the cascade model with stop probability
/// `R_i = (2^rel_i - 1) / 2^max_gain`; binary relevance gives `R = 0.5`.
pub fn err(
    ranking: &[String],
    gains: &HashMap<String, f64>,
    max_gain: f64,
) -> Result<f64, MetricsError> {
    assert!(max_gain > 0.0, "max_gain must be positive");
    let mut total = 0.0;
    let mut continue_prob = 1.0;
    for (pos, id) in ranking.iter().enumerate() {
        let gain = gains
            .get(id)
            .copied()
            .ok_or_else(|| MetricsError::UnknownId(id.clone()))?;
        let stop = (2f64.powf(gain) - 1.0) / 2f64.powf(max_gain);
        total += continue_prob * stop / (pos + 1) as f64;
        continue_prob *= 1.0 - stop;
    }
    Ok(total)
}

/// Average precision: mean of P@k over the positions of relevant items,
/// normalized by the total number of relevant items. 0 when nothing is
/// relevant.
pub fn average_precision(
    ranking: &[String],
    relevance: &HashMap<String, bool>,
) -> Result<f64, MetricsError> {
    let total_relevant = relevance.values().filter(|r| **r).count();
    if total_relevant == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, id) in ranking.iter().enumerate() {
        let relevant = relevance
            .get(id)
            .ok_or_else(|| MetricsError::UnknownId(id.clone()))?;
        if *relevant {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

/// Mean average precision over queries.
pub fn mean_average_precision(
    queries: &[(Vec<String>, HashMap<String, bool>)],
) -> Result<f64, MetricsError> {
    if queries.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (ranking, relevance) in queries {
        sum += average_precision(ranking, relevance)?;
    }
    Ok(sum / queries.len() as f64)
}

/// Which ordering of a [`RankedIssueList`] to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankStrategy {
    Rule,
    Llm,
}

impl std::fmt::Display for RankStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Rule => write!(f, "rule"),
            Self::Llm => write!(f, "llm"),
        }
    }
}

/// Gain scale for NDCG and ERR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceMode {
    /// Gains are 0/1 from the assessment labels.
    Binary,
    /// Gains are `(n + 1 - golden_rank) / n` over the n golden issues.
    Graded,
}

/// Metric values for one (project, strategy) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectMetricsRow {
    pub project: String,
    pub strategy: RankStrategy,
    pub relevance_mode: RelevanceMode,
    pub p_at_1: f64,
    pub p_at_3: f64,
    pub p_at_5: f64,
    pub ndcg_at_1: f64,
    pub ndcg_at_3: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub mrr: f64,
    pub err: f64,
    pub map: f64,
}

/// Per-project rows plus one cumulative (summed) row per strategy, matching
/// the usual "Total" table layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub relevance_mode: RelevanceMode,
    pub rows: Vec<ProjectMetricsRow>,
    pub totals: Vec<ProjectMetricsRow>,
}

impl MetricsReport {
    pub fn new(relevance_mode: RelevanceMode, rows: Vec<ProjectMetricsRow>) -> Self {
        let mut totals = Vec::new();
        for strategy in [RankStrategy::Rule, RankStrategy::Llm] {
            let strategy_rows: Vec<&ProjectMetricsRow> =
                rows.iter().filter(|r| r.strategy == strategy).collect();
            if strategy_rows.is_empty() {
                continue;
            }
            let sum = |f: fn(&ProjectMetricsRow) -> f64| -> f64 {
                strategy_rows.iter().map(|r| f(r)).sum()
            };
            totals.push(ProjectMetricsRow {
                project: "Total".into(),
                strategy,
                relevance_mode,
                p_at_1: sum(|r| r.p_at_1),
                p_at_3: sum(|r| r.p_at_3),
                p_at_5: sum(|r| r.p_at_5),
                ndcg_at_1: sum(|r| r.ndcg_at_1),
                ndcg_at_3: sum(|r| r.ndcg_at_3),
                ndcg_at_5: sum(|r| r.ndcg_at_5),
                ndcg_at_10: sum(|r| r.ndcg_at_10),
                mrr: sum(|r| r.mrr),
                err: sum(|r| r.err),
                map: sum(|r| r.map),
            });
        }
        Self {
            relevance_mode,
            rows,
            totals,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "project,strategy,relevance_mode,p_at_1,p_at_3,p_at_5,ndcg_at_1,ndcg_at_3,ndcg_at_5,ndcg_at_10,mrr,err,map\n",
        );
        for row in self.rows.iter().chain(self.totals.iter()) {
            let mode = match row.relevance_mode {
                RelevanceMode::Binary => "binary",
                RelevanceMode::Graded => "graded",
            };
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
                row.project,
                row.strategy,
                mode,
                row.p_at_1,
                row.p_at_3,
                row.p_at_5,
                row.ndcg_at_1,
                row.ndcg_at_3,
                row.ndcg_at_5,
                row.ndcg_at_10,
                row.mrr,
                row.err,
                row.map,
            ));
        }
        out
    }
}

/// Compute all metrics for one project under the chosen ordering and gain
/// scale.
pub fn evaluate_project(
    ranked: &RankedIssueList,
    golden: &GoldenAnnotation,
    strategy: RankStrategy,
    relevance_mode: RelevanceMode,
) -> Result<ProjectMetricsRow, MetricsError> {
    golden.validate()?;
    let golden_by_id: HashMap<&str, &GoldenIssue> = golden
        .issues
        .iter()
        .map(|issue| (issue.issue_id.as_str(), issue))
        .collect();

    let mut entries = ranked.entries.clone();
    match strategy {
        RankStrategy::Rule => entries.sort_by_key(|e| e.rule_rank),
        RankStrategy::Llm => {
            if entries.iter().any(|e| e.llm_rank.is_none()) {
                return Err(MetricsError::MissingLlmRank);
            }
            entries.sort_by_key(|e| e.llm_rank.unwrap());
        }
    }

    let ordering: Vec<String> = entries.iter().map(|e| e.issue_id.clone()).collect();
    for id in &ordering {
        if !golden_by_id.contains_key(id.as_str()) {
            return Err(MetricsError::GoldenMismatch(format!(
                "issue {id} has no golden annotation"
            )));
        }
    }

    let n = golden.issues.len() as f64;
    let mut relevance = HashMap::new();
    let mut gains = HashMap::new();
    for id in &ordering {
        let judged = golden_by_id[id.as_str()];
        let relevant = judged.assessment.is_relevant();
        relevance.insert(id.clone(), relevant);
        let gain = match relevance_mode {
            RelevanceMode::Binary => {
                if relevant {
                    1.0
                } else {
                    0.0
                }
            }
            RelevanceMode::Graded => (n + 1.0 - judged.golden_rank as f64) / n,
        };
        gains.insert(id.clone(), gain);
    }

    Ok(ProjectMetricsRow {
        project: golden.project_name.clone(),
        strategy,
        relevance_mode,
        p_at_1: precision_at_k(&ordering, &relevance, 1)?,
        p_at_3: precision_at_k(&ordering, &relevance, 3)?,
        p_at_5: precision_at_k(&ordering, &relevance, 5)?,
        ndcg_at_1: ndcg_at_k(&ordering, &gains, 1)?,
        ndcg_at_3: ndcg_at_k(&ordering, &gains, 3)?,
        ndcg_at_5: ndcg_at_k(&ordering, &gains, 5)?,
        ndcg_at_10: ndcg_at_k(&ordering, &gains, 10)?,
        mrr: reciprocal_rank(&ordering, &relevance)?,
        err: err(&ordering, &gains, 1.0)?,
        map: average_precision(&ordering, &relevance)?,
    })
}
