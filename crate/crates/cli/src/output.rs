//! Report rendering: CSV (machine-readable, byte-stable) and aligned text.

use edmm_sim::{RunOutcome, StrategyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Table,
}

pub struct Row {
    pub strategy: String,
    pub outcome: RunOutcome,
}

impl Row {
    pub fn new(config: &StrategyConfig, outcome: RunOutcome) -> Self {
        Row { strategy: config.label(), outcome }
    }
}

const COLUMNS: [&str; 14] = [
    "strategy",
    "load_us",
    "exec_us",
    "pf",
    "aex",
    "eenter",
    "eexit",
    "eaug",
    "eaccept",
    "eremove",
    "crossings",
    "peak_mapped",
    "reused",
    "posix_warnings",
];

fn cells(row: &Row) -> Vec<String> {
    let c = row.outcome.report.counters;
    vec![
        row.strategy.clone(),
        row.outcome.time.load_time_us.to_string(),
        row.outcome.time.exec_time_us.to_string(),
        c.page_faults.to_string(),
        c.aex.to_string(),
        c.eenter.to_string(),
        c.eexit.to_string(),
        c.eaug.to_string(),
        c.eaccept.to_string(),
        c.eremove.to_string(),
        c.crossings.to_string(),
        row.outcome.report.peak_mapped.to_string(),
        c.reused_cached_pages.to_string(),
        c.posix_warnings.to_string(),
    ]
}

/// Percentage delta against a baseline; 0 against 0 is a 0% change.
fn delta_pct(value: f64, baseline: f64) -> String {
    if baseline == 0.0 {
        if value == 0.0 {
            "0.00".to_string()
        } else {
            "inf".to_string()
        }
    } else {
        format!("{:.2}", (value - baseline) / baseline * 100.0)
    }
}

fn total_us(outcome: &RunOutcome) -> f64 {
    outcome.time.load_time_us + outcome.time.exec_time_us
}

/// Renders rows, optionally with percentage-delta columns against the row at
/// `baseline`.
pub fn render(rows: &[Row], baseline: Option<usize>, format: Format) -> String {
    let mut header: Vec<String> = COLUMNS.iter().map(|s| s.to_string()).collect();
    if baseline.is_some() {
        header.push("exec_delta_pct".to_string());
        header.push("total_delta_pct".to_string());
    }
    let mut grid = vec![header];
    for row in rows {
        let mut line = cells(row);
        if let Some(b) = baseline {
            let base = &rows[b].outcome;
            line.push(delta_pct(row.outcome.time.exec_time_us, base.time.exec_time_us));
            line.push(delta_pct(total_us(&row.outcome), total_us(base)));
        }
        grid.push(line);
    }
    match format {
        Format::Csv => {
            let mut out = String::new();
            for line in grid {
                out.push_str(&line.join(","));
                out.push('\n');
            }
            out
        }
        Format::Table => {
            let cols = grid[0].len();
            let mut widths = vec![0usize; cols];
            for line in &grid {
                for (i, cell) in line.iter().enumerate() {
                    widths[i] = widths[i].max(cell.len());
                }
            }
            let mut out = String::new();
            for line in &grid {
                for (i, cell) in line.iter().enumerate() {
                    if i > 0 {
                        out.push_str("  ");
                    }
                    if i == 0 {
                        out.push_str(&format!("{:<width$}", cell, width = widths[i]));
                    } else {
                        out.push_str(&format!("{:>width$}", cell, width = widths[i]));
                    }
                }
                out.push('\n');
            }
            out
        }
    }
}
