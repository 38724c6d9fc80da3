//! Metric rows, prediction files and the summary table.

use std::path::Path;

use rff_core::eval::GzslMetrics;

use crate::error::{BenchError, Result};
use crate::io::read_text;

pub const METRICS_HEADER: &str = "run_id,mode,U,S,H,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub mode: String,
    pub unseen: f64,
    pub seen: f64,
    pub harmonic: f64,
    pub seed: u64,
}

impl MetricsRow {
    pub fn new(run_id: &str, mode: &str, metrics: GzslMetrics, seed: u64) -> Self {
        Self {
            run_id: run_id.into(),
            mode: mode.into(),
            unseen: metrics.unseen,
            seen: metrics.seen,
            harmonic: metrics.harmonic,
            seed,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.4},{:.4},{:.4},{}",
            self.run_id, self.mode, self.unseen, self.seen, self.harmonic, self.seed
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_metrics(path: &Path, text: &str) -> Result<Vec<MetricsRow>> {
    let bad = |line: usize, detail: String| BenchError::Format {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(bad(1, format!("expected header {METRICS_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let [run_id, mode, u, s, h, seed] = f.as_slice() else {
            return Err(bad(i + 1, format!("expected 6 fields, got {}", f.len())));
        };
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad(i + 1, format!("bad number {v:?}")));
        rows.push(MetricsRow {
            run_id: run_id.to_string(),
            mode: mode.to_string(),
            unseen: num(u)?,
            seen: num(s)?,
            harmonic: num(h)?,
            seed: seed.parse().map_err(|_| bad(i + 1, format!("bad seed {seed:?}")))?,
        });
    }
    Ok(rows)
}

pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    parse_metrics(path, &read_text(path)?)
}

/// `index,label,prediction` for every test example.
pub fn predictions_csv(test_index: &[usize], labels: &[usize], predictions: &[usize]) -> String {
    let mut out = String::from("index,label,prediction\n");
    for ((i, y), p) in test_index.iter().zip(labels).zip(predictions) {
        out.push_str(&format!("{i},{y},{p}\n"));
    }
    out
}

/// Method rows against U, S and H columns.
pub fn table(rows: &[MetricsRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.run_id.len() + r.mode.len() + 3)
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = format!("{:<width$} | {:>6} {:>6} {:>6} | seed\n", "Method", "U", "S", "H");
    out.push_str(&format!("{}-+-{}-+-----\n", "-".repeat(width), "-".repeat(20)));
    for r in rows {
        let name = format!("{} ({})", r.run_id, r.mode);
        out.push_str(&format!(
            "{name:<width$} | {:>6.1} {:>6.1} {:>6.1} | {}\n",
            r.unseen, r.seen, r.harmonic, r.seed
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricsRow::new("a", "generation", GzslMetrics::new(59.8, 75.1), 3),
            MetricsRow::new("b", "embedding", GzslMetrics::new(0.0, 80.0), 4),
        ];
        let back = parse_metrics(Path::new("m.csv"), &metrics_csv(&rows)).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].run_id, "a");
        assert!((back[0].harmonic - 66.5824).abs() < 1e-4);
        assert_eq!(back[1].harmonic, 0.0);
    }

    #[test]
    fn table_lists_every_row() {
        let rows = vec![MetricsRow::new("x", "generation", GzslMetrics::new(50.0, 50.0), 1)];
        let t = table(&rows);
        assert!(t.contains("x (generation)"));
        assert!(t.contains("50.0"));
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(parse_metrics(Path::new("m"), "a,b\n").is_err());
    }
}
