use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunResult;
use crate::classifier::METRIC_NAMES;
use crate::error::{invalid, Result};

/// Relative change of one task against the baseline, in percent, per
/// metric column. `None` marks a zero baseline cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task_id: usize,
    pub deltas: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline_task: usize,
    /// Baseline first (all zeros), then `others` in order.
    pub rows: Vec<ComparisonRow>,
}

/// `100·(new − old)/old` for every metric cell.
pub fn compare(baseline: &RunResult, others: &[RunResult]) -> Result<ComparisonReport> {
    let base = baseline.mean.values();
    let row = |r: &RunResult| {
        let deltas = base
            .iter()
            .zip(r.mean.values())
            .map(|(&old, new)| (old != 0.0).then(|| 100.0 * (new - old) / old))
            .collect();
        ComparisonRow { task_id: r.task_id, deltas }
    };
    let mut rows = vec![row(baseline)];
    for r in others {
        if r.task_id == baseline.task_id {
            return Err(invalid!("task {} is the baseline and cannot be compared to itself", r.task_id));
        }
        rows.push(row(r));
    }
    Ok(ComparisonReport { baseline_task: baseline.task_id, rows })
}

/// Rounds half away from zero at `decimals` places. A 1e-9 relative nudge
/// absorbs binary representation error so printed ties round up.
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = x * scale;
    (scaled + scaled.signum() * 1e-9 * scaled.abs().max(1.0)).round() / scale
}

fn pct(d: Option<f64>) -> String {
    match d {
        Some(v) => format!("{:.2}", round_half_up(v, 2)),
        None => String::new(),
    }
}

/// Aligned text and CSV renderings plus a JSON document.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedReport {
    pub results_csv: String,
    pub results_text: String,
    pub comparison_csv: Option<String>,
    pub comparison_text: Option<String>,
    pub json: String,
}

#[derive(Serialize)]
struct JsonRow<'a> {
    task: usize,
    values: Vec<f64>,
    undefined: &'a [String],
}

#[derive(Serialize)]
struct JsonDoc<'a> {
    columns: Vec<&'static str>,
    results: Vec<JsonRow<'a>>,
    comparison: Option<&'a ComparisonReport>,
    artifacts: &'a [String],
}

/// Renders per-task metrics (mean over repeats) and, when given, the
/// relative changes against the baseline. `artifacts` are relative paths listed
/// in the text output.
pub fn render_report(
    results: &[RunResult],
    comparison: Option<&ComparisonReport>,
    artifacts: &[String],
) -> Result<RenderedReport> {
    let header = format!("task,{}", METRIC_NAMES.join(","));
    let mut results_csv = format!("{header}\n");
    for r in results {
        writeln!(results_csv, "{},{}", r.task_id, r.mean.csv_row()).unwrap();
    }
    let width = METRIC_NAMES.iter().map(|n| n.len()).max().unwrap_or(0);
    let mut results_text = String::from("Classification results (mean over repeats)\n");
    write!(results_text, "{:width$}", "metric").unwrap();
    for r in results {
        write!(results_text, "  {:>8}", format!("task {}", r.task_id)).unwrap();
    }
    results_text.push('\n');
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        write!(results_text, "{name:width$}").unwrap();
        for r in results {
            write!(results_text, "  {:>8.4}", r.mean.values()[k]).unwrap();
        }
        results_text.push('\n');
    }
    if !artifacts.is_empty() {
        results_text.push_str("\nArtifacts:\n");
        for a in artifacts {
            writeln!(results_text, "  {a}").unwrap();
        }
    }
    let (comparison_csv, comparison_text) = match comparison {
        Some(c) => {
            let mut csv = format!("{header}\n");
            let mut text = format!("Relative change vs task {} (%)\n", c.baseline_task);
            write!(text, "{:width$}", "metric").unwrap();
            for row in &c.rows {
                write!(text, "  {:>8}", format!("task {}", row.task_id)).unwrap();
                let cells: Vec<String> = row.deltas.iter().map(|d| pct(*d)).collect();
                writeln!(csv, "{},{}", row.task_id, cells.join(",")).unwrap();
            }
            text.push('\n');
            for (k, name) in METRIC_NAMES.iter().enumerate() {
                write!(text, "{name:width$}").unwrap();
                for row in &c.rows {
                    let cell = match row.deltas[k] {
                        Some(v) => format!("{:+.2}", round_half_up(v, 2)),
                        None => "n/a".to_string(),
                    };
                    write!(text, "  {cell:>8}").unwrap();
                }
                text.push('\n');
            }
            (Some(csv), Some(text))
        }
        None => (None, None),
    };
    let doc = JsonDoc {
        columns: METRIC_NAMES.to_vec(),
        results: results
            .iter()
            .map(|r| JsonRow { task: r.task_id, values: r.mean.values().to_vec(), undefined: &r.mean.undefined })
            .collect(),
        comparison,
        artifacts,
    };
    Ok(RenderedReport {
        results_csv,
        results_text,
        comparison_csv,
        comparison_text,
        json: serde_json::to_string_pretty(&doc)?,
    })
}

/// Writes `results.csv`, `results.txt`, `comparison.csv`, `comparison.txt`
/// and `report.json` into `dir`.
pub fn write_report(dir: &Path, report: &RenderedReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), &report.results_csv)?;
    std::fs::write(dir.join("results.txt"), &report.results_text)?;
    if let Some(c) = &report.comparison_csv {
        std::fs::write(dir.join("comparison.csv"), c)?;
    }
    if let Some(t) = &report.comparison_text {
        std::fs::write(dir.join("comparison.txt"), t)?;
    }
    std::fs::write(dir.join("report.json"), &report.json)?;
    Ok(())
}
