//! Report structures, JSON output and a plain-text summary table.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::config::ExperimentConfig;
use crate::baselines::StrategyId;
use crate::budget::BudgetPlan;
use crate::metrics::{paired_t_test, Alternative, RankingMetrics};
use crate::{Error, Result};

/// Significant digits kept for every number in a written report.
pub const REPORT_DIGITS: usize = 6;

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub users: usize,
    pub items: usize,
    pub attrs: usize,
    pub ratings: usize,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItemRequestCount {
    pub item: usize,
    pub requested: usize,
    pub answered: usize,
}

/// How the iterative selector behaved across a strategy's items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Convergence {
    pub problems: usize,
    pub converged: usize,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub monotone: bool,
}

/// Properties of the chosen users, averaged over items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionDiagnostics {
    /// Mean willingness of the requested users.
    pub selected_willingness: f64,
    /// Mean pairwise `sqrt|r_m − r_n|` over the ratings actually given
    /// (items with at least two answers).
    pub feedback_diversity: f64,
    /// Mean raw similarity between requested and unrequested pool users.
    pub selected_similarity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyReport {
    pub strategy: StrategyId,
    pub pfr: Option<f64>,
    pub ast: Option<f64>,
    pub requests: usize,
    pub answers: usize,
    pub distinct_users: usize,
    pub rmse: f64,
    pub mae: f64,
    pub ranking: RankingMetrics,
    pub predictions: usize,
    pub convergence: Option<Convergence>,
    pub diagnostics: Option<SelectionDiagnostics>,
    pub budget: Option<BudgetPlan>,
    pub items: Vec<ItemRequestCount>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub repetition: usize,
    pub split_seed: u64,
    pub seed: u64,
    pub train_items: usize,
    pub test_items: usize,
    pub active_users: usize,
    pub prediction_users: usize,
    pub strategies: Vec<StrategyReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub mean: f64,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(values: Vec<f64>) -> Self {
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        Self { mean, values }
    }
}

/// One metric across repetitions, ready for paired testing.
#[derive(Debug, Clone, Serialize)]
pub struct StrategySummary {
    pub strategy: StrategyId,
    pub pfr: Option<Series>,
    pub ast: Option<Series>,
    pub rmse: Series,
    pub mae: Series,
    pub precision_at_5: Series,
    pub precision_at_n: Series,
    pub recall_at_5: Series,
    pub recall_at_n: Series,
    pub ndcg_at_5: Series,
    pub ndcg_at_n: Series,
}

#[derive(Debug, Clone, Serialize)]
pub struct Significance {
    pub reference: StrategyId,
    pub other: StrategyId,
    pub metric: &'static str,
    pub alternative: Alternative,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub data: DataSummary,
    pub runs: Vec<RunReport>,
    pub summary: Vec<StrategySummary>,
    pub significance: Vec<Significance>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn strategy(&self, run: usize, id: StrategyId) -> Option<&StrategyReport> {
        self.runs.get(run)?.strategies.iter().find(|s| s.strategy == id)
    }

    pub fn summary_for(&self, id: StrategyId) -> Option<&StrategySummary> {
        self.summary.iter().find(|s| s.strategy == id)
    }

    /// Pretty JSON with fields in declaration order and numbers rounded to
    /// [`REPORT_DIGITS`] significant digits.
    pub fn to_json_string(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serialises");
        round_numbers(&mut value, REPORT_DIGITS);
        let mut text = serde_json::to_string_pretty(&value).expect("json value serialises");
        text.push('\n');
        text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

fn round_to(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x)
}

/// Rounds every floating-point number in `value` in place. Integers are
/// left untouched.
pub fn round_numbers(value: &mut Value, digits: usize) {
    match value {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().and_then(|x| serde_json::Number::from_f64(round_to(x, digits))) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|v| round_numbers(v, digits)),
        Value::Object(map) => map.values_mut().for_each(|v| round_numbers(v, digits)),
        _ => {}
    }
}

pub(crate) fn summarize(strategies: &[StrategyId], runs: &[RunReport]) -> Vec<StrategySummary> {
    strategies
        .iter()
        .map(|&id| {
            let reports: Vec<&StrategyReport> = runs
                .iter()
                .filter_map(|r| r.strategies.iter().find(|s| s.strategy == id))
                .collect();
            let series = |f: &dyn Fn(&StrategyReport) -> f64| Series::new(reports.iter().map(|r| f(r)).collect());
            let optional = |f: &dyn Fn(&StrategyReport) -> Option<f64>| {
                reports
                    .iter()
                    .map(|r| f(r))
                    .collect::<Option<Vec<f64>>>()
                    .map(Series::new)
            };
            StrategySummary {
                strategy: id,
                pfr: optional(&|r| r.pfr),
                ast: optional(&|r| r.ast),
                rmse: series(&|r| r.rmse),
                mae: series(&|r| r.mae),
                precision_at_5: series(&|r| r.ranking.precision_at_5),
                precision_at_n: series(&|r| r.ranking.precision_at_n),
                recall_at_5: series(&|r| r.ranking.recall_at_5),
                recall_at_n: series(&|r| r.ranking.recall_at_n),
                ndcg_at_5: series(&|r| r.ranking.ndcg_at_5),
                ndcg_at_n: series(&|r| r.ranking.ndcg_at_n),
            }
        })
        .collect()
}

/// Paired tests of the reference strategy (the dynamic-budget variant if
/// configured, else the fixed-budget one) against every other strategy:
/// lower RMSE, and higher PFR where both strategies ask for ratings.
pub(crate) fn significance(summary: &[StrategySummary]) -> Vec<Significance> {
    if summary.first().is_none_or(|s| s.rmse.values.len() < 2) {
        return Vec::new();
    }
    let Some(reference) = [StrategyId::FmfcDb, StrategyId::Fmfc]
        .into_iter()
        .find_map(|id| summary.iter().find(|s| s.strategy == id))
    else {
        return Vec::new();
    };
    let test = |other: &StrategySummary, metric: &'static str, a: &Series, b: &Series, alt: Alternative| {
        let result = paired_t_test(&a.values, &b.values, alt).ok();
        Significance {
            reference: reference.strategy,
            other: other.strategy,
            metric,
            alternative: alt,
            t: result.map(|r| r.t).filter(|t| t.is_finite()),
            p: result.map(|r| r.p),
            significant: result.is_some_and(|r| r.significant),
        }
    };
    let mut out = Vec::new();
    for other in summary.iter().filter(|s| s.strategy != reference.strategy) {
        out.push(test(other, "rmse", &reference.rmse, &other.rmse, Alternative::Less));
        if let (Some(a), Some(b)) = (&reference.pfr, &other.pfr) {
            out.push(test(other, "pfr", a, b, Alternative::Greater));
        }
    }
    out
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => "-".to_string(),
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => format!("{x:.4}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

/// Fixed-width table of per-strategy means from a report's JSON form.
pub fn render_table(report: &Value) -> Result<String> {
    let summary = report
        .get("summary")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::validation("report has no summary section"))?;
    let runs = report.get("runs").and_then(Value::as_array).map_or(0, Vec::len);
    let columns = [
        ("PFR", "pfr"),
        ("AST", "ast"),
        ("RMSE", "rmse"),
        ("MAE", "mae"),
        ("P@5", "precision_at_5"),
        ("P@N", "precision_at_n"),
        ("R@5", "recall_at_5"),
        ("R@N", "recall_at_n"),
        ("NDCG@5", "ndcg_at_5"),
        ("NDCG@N", "ndcg_at_n"),
    ];
    let mut out = String::new();
    let _ = writeln!(out, "runs: {runs}");
    let _ = write!(out, "{:<12}", "strategy");
    for (title, _) in columns {
        let _ = write!(out, "{title:>9}");
    }
    out.push('\n');
    for row in summary {
        let name = row.get("strategy").and_then(Value::as_str).unwrap_or("?");
        let _ = write!(out, "{name:<12}");
        for (_, key) in columns {
            let mean = row.get(key).and_then(|s| s.get("mean")).unwrap_or(&Value::Null);
            let _ = write!(out, "{:>9}", cell(mean));
        }
        out.push('\n');
    }
    if let Some(tests) = report.get("significance").and_then(Value::as_array) {
        for t in tests.iter() {
            let field = |k: &str| t.get(k).map(cell).unwrap_or_default();
            let _ = writeln!(
                out,
                "{} vs {} on {} ({}): p = {}{}",
                field("reference").trim_matches('"'),
                field("other").trim_matches('"'),
                field("metric").trim_matches('"'),
                field("alternative").trim_matches('"'),
                field("p"),
                if t.get("significant") == Some(&Value::Bool(true)) { " *" } else { "" }
            );
        }
    }
    if let Some(secs) = report.get("wall_clock_seconds").and_then(Value::as_f64) {
        let _ = writeln!(out, "wall clock: {secs:.2} s");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_six_digits() {
        assert_eq!(round_to(0.123456789, 6), 0.123457);
        assert_eq!(round_to(1234567.0, 6), 1234570.0);
        assert_eq!(round_to(-2.5e-9, 6), -2.5e-9);
        let mut v = serde_json::json!({"a": 1.23456789, "b": [1, 9.87654321], "c": 7});
        round_numbers(&mut v, 6);
        assert_eq!(v, serde_json::json!({"a": 1.23457, "b": [1, 9.87654], "c": 7}));
    }
}
