//! Result files written by `run`.
//!
//! ```text
//! <dir>/results.csv          one ResultRow per method, replicate and iteration
//! <dir>/replicates.csv       per-replicate seed, input hashes, best-fit parameter
//! <dir>/acquired/<m>-r<k>.csv acquired inputs (natural units) and outputs
//! <dir>/summary.json         per-iteration quartiles and per-run statistics
//! <dir>/spec.toml            the spec that produced the results
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use seqcal::designer::Method;

use crate::experiment::{join_values, ExperimentResult, Quartiles};
use crate::spec::Resolved;

pub const RESULTS_FILE: &str = "results.csv";
pub const REPLICATES_FILE: &str = "replicates.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ACQUIRED_DIR: &str = "acquired";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub initial_sha256: String,
    pub field_sha256: String,
    /// Natural units, `;`-separated.
    pub best_fit: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub iteration: usize,
    pub mad_p: Option<Quartiles>,
    pub mad_y: Option<Quartiles>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub replicate: usize,
    pub method: Method,
    pub acquisitions: usize,
    pub error: Option<String>,
    pub interval_score: Option<Vec<f64>>,
    pub width: Option<Vec<f64>>,
    pub field_hit_fraction: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub testbed: String,
    pub discrepancy: bool,
    pub n0: usize,
    pub n: usize,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub series: BTreeMap<String, Vec<SeriesPoint>>,
    pub runs: Vec<RunSummary>,
}

pub fn acquired_file_name(method: Method, replicate: usize) -> String {
    format!("{}-r{replicate}.csv", method.name())
}

pub fn summarize(r: &Resolved, result: &ExperimentResult) -> Summary {
    let mut series = BTreeMap::new();
    for method in &r.spec.methods {
        let mut points = Vec::with_capacity(r.spec.n);
        for it in 1..=r.spec.n {
            let rows: Vec<_> = result.rows().filter(|row| row.method == *method && row.iteration == it).collect();
            if rows.is_empty() {
                continue;
            }
            let mp: Vec<f64> = rows.iter().filter_map(|row| row.mad_p).collect();
            let my: Vec<f64> = rows.iter().filter_map(|row| row.mad_y).collect();
            points.push(SeriesPoint { iteration: it, mad_p: Quartiles::of(&mp), mad_y: Quartiles::of(&my) });
        }
        series.insert(method.name().to_string(), points);
    }
    let runs = result
        .runs
        .iter()
        .map(|run| {
            let stats = run.stats(r, &result.replicates[run.replicate]);
            RunSummary {
                replicate: run.replicate,
                method: run.method,
                acquisitions: run.history.records.len(),
                error: run.error.clone(),
                interval_score: stats.as_ref().map(|s| s.interval_score.clone()),
                width: stats.as_ref().map(|s| s.width.clone()),
                field_hit_fraction: stats.as_ref().map(|s| s.field_hit_fraction),
            }
        })
        .collect();
    Summary {
        schema_version: crate::spec::SCHEMA_VERSION,
        testbed: r.spec.testbed.clone(),
        discrepancy: r.spec.discrepancy,
        n0: r.spec.n0,
        n: r.spec.n,
        replicates: r.spec.replicates,
        methods: r.spec.methods.clone(),
        series,
        runs,
    }
}

pub fn write_all(dir: &Path, r: &Resolved, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir.join(ACQUIRED_DIR)).with_context(|| format!("creating {}", dir.display()))?;

    let mut w = csv::Writer::from_path(dir.join(RESULTS_FILE))?;
    for row in result.rows() {
        w.serialize(row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(REPLICATES_FILE))?;
    for s in &result.replicates {
        w.serialize(ReplicateRow {
            replicate: s.replicate,
            seed: s.seed,
            initial_sha256: s.initial_sha256.clone(),
            field_sha256: s.field_sha256.clone(),
            best_fit: join_values(&s.best_fit),
        })?;
    }
    w.flush()?;

    let (q, p) = (r.model.q(), r.model.p());
    for run in &result.runs {
        let mut w = csv::Writer::from_path(dir.join(ACQUIRED_DIR).join(acquired_file_name(run.method, run.replicate)))?;
        let mut header = vec!["iteration".to_string()];
        header.extend((1..=q).map(|i| format!("x{i}")));
        header.extend((1..=p).map(|i| format!("theta{i}")));
        header.push("output".into());
        w.write_record(&header)?;
        for (rec, z) in run.history.records.iter().zip(run.natural_inputs(r)) {
            let mut fields = vec![rec.iteration.to_string()];
            fields.extend(z.iter().map(|v| v.to_string()));
            fields.push(rec.output.to_string());
            w.write_record(&fields)?;
        }
        w.flush()?;
    }

    let summary = summarize(r, result);
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    fs::write(dir.join("spec.toml"), toml::to_string(&r.spec)?)?;
    Ok(())
}
