//! Report files: per-row metrics, per-stage timings, summaries and a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Metric};
use crate::experiment::CellResult;

/// Code version recorded in manifests.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One line of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub experiment: String,
    pub n: usize,
    pub seed: u64,
    pub metric: &'static str,
    pub target: String,
    pub value: f64,
    /// `ok` or `failed: <reason>`.
    pub status: String,
}

/// Expands cell results into report rows; failed cells yield one failed row per expected metric.
pub fn report_rows(config: &ExperimentConfig, cells: &[CellResult]) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for cell in cells {
        let row = |metric: Metric, target: &str, value: f64, status: String| ReportRow {
            experiment: config.id.clone(),
            n: cell.n,
            seed: cell.seed,
            metric: metric.name(),
            target: target.to_string(),
            value,
            status,
        };
        match &cell.error {
            None => rows.extend(cell.values.iter().map(|v| row(v.metric, &v.target, v.value, "ok".into()))),
            Some(e) => {
                for m in &config.metrics {
                    if *m == Metric::JError {
                        for p in &config.policies {
                            rows.push(row(*m, p, f64::NAN, format!("failed: {e}")));
                        }
                    } else {
                        rows.push(row(*m, "", f64::NAN, format!("failed: {e}")));
                    }
                }
            }
        }
    }
    rows
}

fn csv_string<T: Serialize>(rows: &[T], header: &[&str]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header).expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// `report.csv` text.
pub fn render_report(rows: &[ReportRow]) -> String {
    csv_string(rows, &["experiment", "n", "seed", "metric", "target", "value", "status"])
}

/// One line of `timings.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub experiment: String,
    pub n: usize,
    pub seed: u64,
    pub stage: String,
    pub ms: f64,
}

/// `timings.csv` text.
pub fn render_timings(config: &ExperimentConfig, cells: &[CellResult]) -> String {
    let rows: Vec<TimingRow> = cells
        .iter()
        .flat_map(|c| {
            c.timings.iter().map(|(stage, ms)| TimingRow {
                experiment: config.id.clone(),
                n: c.n,
                seed: c.seed,
                stage: stage.clone(),
                ms: *ms,
            })
        })
        .collect();
    csv_string(&rows, &["experiment", "n", "seed", "stage", "ms"])
}

/// One line of `summary.csv`: the spread of a metric over seeds at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub n: usize,
    pub metric: &'static str,
    pub target: String,
    pub count: usize,
    pub failed: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median of unsorted data, ignoring NaN.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Metric name, successful values and failure count of one summary group.
type Group = (&'static str, Vec<f64>, usize);

/// Per-`(n, metric, target)` summaries in report order.
pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, usize, String), Group> = BTreeMap::new();
    let order = |m: &str| Metric::ALL.iter().position(|x| x.name() == m).unwrap_or(usize::MAX);
    let experiment = rows.first().map(|r| r.experiment.clone()).unwrap_or_default();
    for r in rows {
        let g = groups.entry((r.n, order(r.metric), r.target.clone())).or_insert((r.metric, Vec::new(), 0));
        if r.status == "ok" {
            g.1.push(r.value);
        } else {
            g.2 += 1;
        }
    }
    groups
        .into_iter()
        .map(|((n, _, target), (metric, mut v, failed))| {
            v.sort_by(f64::total_cmp);
            let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
            SummaryRow {
                experiment: experiment.clone(),
                n,
                metric,
                target,
                count: v.len(),
                failed,
                mean: if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 },
                median: quantile(&v, 0.5),
                q1,
                q3,
                iqr: q3 - q1,
            }
        })
        .collect()
}

/// `summary.csv` text.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    csv_string(rows, &["experiment", "n", "metric", "target", "count", "failed", "mean", "median", "q1", "q3", "iqr"])
}

/// Hex SHA-256 digest.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub code_version: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub cells: usize,
    pub failed_cells: usize,
    /// SHA-256 of each deterministic output file.
    pub files: BTreeMap<String, String>,
}

/// Paths of the written report files.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub report: PathBuf,
    pub summary: PathBuf,
    pub timings: PathBuf,
    pub manifest: PathBuf,
}

/// Writes all report files into `dir`.
pub fn write_reports(dir: &Path, config: &ExperimentConfig, cells: &[CellResult]) -> std::io::Result<ReportPaths> {
    std::fs::create_dir_all(dir)?;
    let rows = report_rows(config, cells);
    let report = render_report(&rows);
    let summary = render_summary(&summarize(&rows));
    let timings = render_timings(config, cells);
    let paths = ReportPaths {
        report: dir.join("report.csv"),
        summary: dir.join("summary.csv"),
        timings: dir.join("timings.csv"),
        manifest: dir.join("manifest.json"),
    };
    std::fs::write(&paths.report, &report)?;
    std::fs::write(&paths.summary, &summary)?;
    std::fs::write(&paths.timings, &timings)?;
    let manifest = Manifest {
        experiment: config.id.clone(),
        code_version: CODE_VERSION.to_string(),
        config_sha256: sha256_hex(config.canonical_json().as_bytes()),
        config: config.clone(),
        seeds: config.seed_list(),
        cells: cells.len(),
        failed_cells: cells.iter().filter(|c| c.error.is_some()).count(),
        files: BTreeMap::from([
            ("report.csv".to_string(), sha256_hex(report.as_bytes())),
            ("summary.csv".to_string(), sha256_hex(summary.as_bytes())),
        ]),
    };
    std::fs::write(&paths.manifest, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(median(&[3.0, f64::NAN, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn failed_cells_become_failed_rows() {
        let cfg = ExperimentConfig::new("x", "t1", vec![10]);
        let cells = vec![CellResult {
            n: 10,
            seed: 1,
            values: vec![],
            timings: vec![],
            error: Some("boom, badly".into()),
        }];
        let rows = report_rows(&cfg, &cells);
        assert_eq!(rows.len(), Metric::ALL.len());
        assert!(rows.iter().all(|r| r.status.starts_with("failed") && r.value.is_nan()));
        let text = render_report(&rows);
        assert!(text.contains("\"failed: boom, badly\""));
        let s = summarize(&rows);
        assert!(s.iter().all(|r| r.failed == 1 && r.count == 0));
    }
}
