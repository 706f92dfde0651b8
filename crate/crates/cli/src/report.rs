//! `report`: tables derived from the CSV files of a results directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use seqcal::designer::Method;
use seqcal::metrics;

use crate::experiment::{Quartiles, ResultRow, INTERVAL_ALPHA};
use crate::output::{acquired_file_name, ReplicateRow, ACQUIRED_DIR, REPLICATES_FILE, RESULTS_FILE};

pub const REPORT_DIR: &str = "report";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub method: Method,
    pub metric: String,
    pub iteration: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Acquisitions needed by each method to reach the worst method's final
/// median error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub metric: String,
    pub method: Method,
    pub final_median: f64,
    pub threshold: f64,
    pub iterations: Option<usize>,
}

/// Interval score (parameters) or quantile width (design inputs) per
/// dimension, averaged over replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRow {
    pub method: Method,
    pub statistic: String,
    pub dimension: usize,
    pub mean: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub series: Vec<SeriesRow>,
    pub thresholds: Vec<ThresholdRow>,
    pub acquisition: Vec<AcquisitionRow>,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

pub fn series(rows: &[ResultRow]) -> Vec<SeriesRow> {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut out = Vec::new();
    for metric in ["mad_p", "mad_y"] {
        for m in &methods {
            let mut by_iter: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.method == *m) {
                let v = if metric == "mad_p" { r.mad_p } else { r.mad_y };
                if let Some(v) = v {
                    by_iter.entry(r.iteration).or_default().push(v);
                }
            }
            for (iteration, values) in by_iter {
                let q = Quartiles::of(&values).expect("non-empty");
                out.push(SeriesRow { method: *m, metric: metric.into(), iteration, q1: q.q1, median: q.median, q3: q.q3 });
            }
        }
    }
    out
}

pub fn thresholds(series: &[SeriesRow]) -> Vec<ThresholdRow> {
    let mut out = Vec::new();
    for metric in ["mad_p", "mad_y"] {
        let mut finals: Vec<(Method, f64)> = Vec::new();
        for s in series.iter().filter(|s| s.metric == metric) {
            match finals.iter_mut().find(|(m, _)| *m == s.method) {
                Some(entry) => entry.1 = s.median,
                None => finals.push((s.method, s.median)),
            }
        }
        let Some(threshold) = finals.iter().map(|(_, v)| *v).reduce(f64::max) else { continue };
        for (method, final_median) in finals {
            let iterations = series
                .iter()
                .filter(|s| s.metric == metric && s.method == method)
                .find(|s| s.median <= threshold)
                .map(|s| s.iteration);
            out.push(ThresholdRow { metric: metric.into(), method, final_median, threshold, iterations });
        }
    }
    out
}

fn acquisition(dir: &Path, methods: &[Method], replicates: &[ReplicateRow]) -> Result<Vec<AcquisitionRow>> {
    let mut out = Vec::new();
    for m in methods {
        let mut scores: Vec<Vec<f64>> = Vec::new();
        let mut widths: Vec<Vec<f64>> = Vec::new();
        for rep in replicates {
            let path = dir.join(ACQUIRED_DIR).join(acquired_file_name(*m, rep.replicate));
            if !path.exists() {
                continue;
            }
            let mut reader = csv::Reader::from_path(&path)?;
            let header = reader.headers()?.clone();
            let rows: Vec<Vec<f64>> = reader
                .records()
                .map(|rec| rec.map_err(anyhow::Error::from).and_then(|r| r.iter().map(|v| v.parse::<f64>().map_err(Into::into)).collect()))
                .collect::<Result<_>>()?;
            if rows.len() < 2 {
                continue;
            }
            let col = |j: usize| -> Vec<f64> { rows.iter().map(|r| r[j]).collect() };
            let best_fit: Vec<f64> = rep.best_fit.split(';').map(str::parse).collect::<Result<_, _>>()?;
            let xs: Vec<usize> = (0..header.len()).filter(|j| header[*j].starts_with('x')).collect();
            let ts: Vec<usize> = (0..header.len()).filter(|j| header[*j].starts_with("theta")).collect();
            if ts.len() != best_fit.len() {
                bail!("{} has {} parameter columns but the best fit has {}", path.display(), ts.len(), best_fit.len());
            }
            widths.push(xs.iter().map(|j| metrics::quantile_width(&col(*j), 0.05, 0.95)).collect());
            scores.push(ts.iter().zip(&best_fit).map(|(j, a)| metrics::interval_score(&col(*j), INTERVAL_ALPHA, *a)).collect());
        }
        for (name, values) in [("interval_score", &scores), ("width", &widths)] {
            let Some(dims) = values.first().map(Vec::len) else { continue };
            for d in 0..dims {
                let mean = values.iter().map(|v| v[d]).sum::<f64>() / values.len() as f64;
                out.push(AcquisitionRow { method: *m, statistic: name.into(), dimension: d + 1, mean, replicates: values.len() });
            }
        }
    }
    Ok(out)
}

pub fn build(dir: &Path) -> Result<Report> {
    let rows: Vec<ResultRow> = read_csv(&dir.join(RESULTS_FILE))?;
    if rows.is_empty() {
        bail!("{} holds no results", dir.join(RESULTS_FILE).display());
    }
    let replicates: Vec<ReplicateRow> = read_csv(&dir.join(REPLICATES_FILE))?;
    let series = series(&rows);
    let thresholds = thresholds(&series);
    let mut methods: Vec<Method> = Vec::new();
    for r in &rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let acquisition = acquisition(dir, &methods, &replicates)?;
    Ok(Report { series, thresholds, acquisition })
}

pub fn write(dir: &Path, report: &Report) -> Result<()> {
    let out = dir.join(REPORT_DIR);
    fs::create_dir_all(&out)?;
    fn dump<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
    dump(&out.join("series.csv"), &report.series)?;
    dump(&out.join("thresholds.csv"), &report.thresholds)?;
    dump(&out.join("acquisition.csv"), &report.acquisition)?;
    Ok(())
}

/// Plain-text tables for the terminal.
pub fn render(report: &Report) -> String {
    let mut s = String::new();
    for metric in ["mad_p", "mad_y"] {
        let rows: Vec<_> = report.thresholds.iter().filter(|t| t.metric == metric).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(s, "{metric}: acquisitions to reach {:.4e}", rows[0].threshold);
        for t in rows {
            let it = t.iterations.map_or("-".to_string(), |i| i.to_string());
            let _ = writeln!(s, "  {:<9} {:>5}   final median {:.4e}", t.method.name(), it, t.final_median);
        }
    }
    for stat in ["interval_score", "width"] {
        let rows: Vec<_> = report.acquisition.iter().filter(|a| a.statistic == stat).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(s, "{stat} (mean over replicates)");
        let mut methods: Vec<Method> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method) {
                methods.push(r.method);
            }
        }
        for m in methods {
            let vals: Vec<String> = rows.iter().filter(|r| r.method == m).map(|r| format!("{:.3}", r.mean)).collect();
            let _ = writeln!(s, "  {:<9} {}", m.name(), vals.join("  "));
        }
    }
    s
}
