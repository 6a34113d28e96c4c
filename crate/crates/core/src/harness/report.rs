//! Aggregation of results files into mean ± standard-error tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::records::RolloutRecord;
use crate::error::Result;

/// Mean and standard error of a sample; the error is `None` below two
/// values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: Option<f64>,
    pub se: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: None, se: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = (n > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Self { n, mean: Some(mean), se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task: String,
    pub variant: String,
    /// `None` for the row pooled over all budgets.
    pub budget: Option<usize>,
    pub records: usize,
    pub failed: usize,
    pub success: Stat,
    pub found: Stat,
    /// Over records that found at least one goal.
    pub timesteps_per_goal: Stat,
    pub sequence_match: Stat,
    pub reverse_steps: Stat,
    pub wall_ms: Stat,
}

fn row(task: &str, variant: &str, budget: Option<usize>, recs: &[&RolloutRecord]) -> ReportRow {
    let ok: Vec<&RolloutRecord> = recs.iter().copied().filter(|r| r.error.is_none()).collect();
    let stat = |f: &dyn Fn(&RolloutRecord) -> Option<f64>| Stat::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
    ReportRow {
        task: task.to_string(),
        variant: variant.to_string(),
        budget,
        records: recs.len(),
        failed: recs.len() - ok.len(),
        success: stat(&|r| Some(if r.success { 1.0 } else { 0.0 })),
        found: stat(&|r| Some(r.found as f64)),
        timesteps_per_goal: stat(&|r| r.timesteps_per_goal),
        sequence_match: stat(&|r| r.sequence_match.map(|v| v as f64)),
        reverse_steps: stat(&|r| Some(r.reverse_steps as f64)),
        wall_ms: stat(&|r| Some(r.wall_ms)),
    }
}

/// One row per (task, variant, budget) plus one pooled row per
/// (task, variant).
pub fn summarize(records: &[RolloutRecord]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, String), BTreeMap<usize, Vec<&RolloutRecord>>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.task.clone(), r.variant.to_string()))
            .or_default()
            .entry(r.budget)
            .or_default()
            .push(r);
    }
    let mut rows = Vec::new();
    for ((task, variant), budgets) in &groups {
        for (b, recs) in budgets {
            rows.push(row(task, variant, Some(*b), recs));
        }
        let all: Vec<&RolloutRecord> = budgets.values().flatten().copied().collect();
        rows.push(row(task, variant, None, &all));
    }
    rows
}

fn fmt_stat(s: &Stat) -> String {
    match (s.mean, s.se) {
        (Some(m), Some(e)) => format!("{m:.3} ± {e:.3}"),
        (Some(m), None) => format!("{m:.3}"),
        _ => "-".into(),
    }
}

/// Plain-text table.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut out = format!(
        "{:<12} {:<13} {:>6} {:>5} {:>17} {:>17} {:>19} {:>17}\n",
        "task", "variant", "budget", "n", "success", "found", "steps/goal", "seq match"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:<13} {:>6} {:>5} {:>17} {:>17} {:>19} {:>17}\n",
            r.task,
            r.variant,
            r.budget.map_or("all".to_string(), |b| b.to_string()),
            r.records,
            fmt_stat(&r.success),
            fmt_stat(&r.found),
            fmt_stat(&r.timesteps_per_goal),
            fmt_stat(&r.sequence_match),
        ));
    }
    out
}

#[derive(Serialize)]
struct CsvRow<'a> {
    task: &'a str,
    variant: &'a str,
    budget: String,
    records: usize,
    failed: usize,
    success_mean: Option<f64>,
    success_se: Option<f64>,
    found_mean: Option<f64>,
    found_se: Option<f64>,
    timesteps_per_goal_n: usize,
    timesteps_per_goal_mean: Option<f64>,
    timesteps_per_goal_se: Option<f64>,
    sequence_match_mean: Option<f64>,
    sequence_match_se: Option<f64>,
    reverse_steps_mean: Option<f64>,
    wall_ms_mean: Option<f64>,
}

/// Plot-ready CSV; missing values are empty cells.
pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(CsvRow {
            task: &r.task,
            variant: &r.variant,
            budget: r.budget.map_or("all".to_string(), |b| b.to_string()),
            records: r.records,
            failed: r.failed,
            success_mean: r.success.mean,
            success_se: r.success.se,
            found_mean: r.found.mean,
            found_se: r.found.se,
            timesteps_per_goal_n: r.timesteps_per_goal.n,
            timesteps_per_goal_mean: r.timesteps_per_goal.mean,
            timesteps_per_goal_se: r.timesteps_per_goal.se,
            sequence_match_mean: r.sequence_match.mean,
            sequence_match_se: r.sequence_match.se,
            reverse_steps_mean: r.reverse_steps.mean,
            wall_ms_mean: r.wall_ms.mean,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_matches_hand_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, Some(2.5));
        // Sample variance 5/3, SE sqrt(5/12).
        assert!((s.se.unwrap() - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).se, None);
        assert_eq!(Stat::of(&[]).mean, None);
    }
}
