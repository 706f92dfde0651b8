//! Replicate × method runner.
//!
//! Each replicate derives one seed from the master seed. Field data,
//! the initial design and the reference sets come from fixed streams of
//! that seed, so every method in a replicate sees the same inputs. Each
//! method then gets its own stream for candidate generation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use seqcal::acquisition::lhs_sample;
use seqcal::designer::{self, field_residuals, DesignConfig, DiscrepancyMode, Method, ReferenceSets, RunHistory};
use seqcal::metrics;
use seqcal::optim::{nelder_mead, Bounds};
use seqcal::posterior::{fit_discrepancy, FieldExperiment};
use seqcal::rng::{derive_seed, rng_from, streams};
use seqcal::space::JointInput;
use seqcal::testbeds::{make_field_data, ExternalSim, Simulator};

use crate::spec::Resolved;

/// One row per method, replicate and acquisition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub replicate: usize,
    pub iteration: usize,
    pub method: Method,
    pub mad_p: Option<f64>,
    pub mad_y: Option<f64>,
    /// Natural units, `;`-separated.
    pub theta_hat: String,
    pub wall_ms: f64,
}

/// Everything shared by the methods of one replicate.
#[derive(Clone, Debug)]
pub struct ReplicateSetup {
    pub replicate: usize,
    pub seed: u64,
    pub field: FieldExperiment,
    pub initial: Vec<JointInput>,
    pub references: ReferenceSets,
    /// Unnormalized true posterior on the parameter reference set; absent
    /// when the field covariance is not known.
    pub true_posterior: Option<Vec<f64>>,
    pub true_field: Vec<f64>,
    /// Least-squares parameter under the true simulator, natural units.
    pub best_fit: Vec<f64>,
    pub initial_sha256: String,
    pub field_sha256: String,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub replicate: usize,
    pub method: Method,
    pub rows: Vec<ResultRow>,
    pub history: RunHistory,
    pub error: Option<String>,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub replicates: Vec<ReplicateSetup>,
    /// Ordered by replicate, then by the spec's method order.
    pub runs: Vec<RunOutcome>,
}

impl ExperimentResult {
    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.runs.iter().flat_map(|r| r.rows.iter())
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| !r.completed()).count()
    }
}

fn linspace(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
}

fn reference_sets(r: &Resolved, seed: u64) -> ReferenceSets {
    let (q, p) = (r.model.q(), r.model.p());
    let mut rng = rng_from(derive_seed(seed, streams::REFERENCE));
    let theta = if p == 1 { linspace(r.theta_ref) } else { lhs_sample(r.theta_ref, p, &mut rng) };
    let x = match q {
        1 => linspace(r.x_ref),
        2 => {
            let axis = linspace(r.x_ref);
            axis.iter().flat_map(|a| axis.iter().map(move |b| vec![a[0], b[0]])).collect()
        }
        _ => lhs_sample(r.x_ref, q, &mut rng),
    };
    let z = lhs_sample(r.z_ref, q + p, &mut rng)
        .into_iter()
        .map(|u| JointInput::from_concat(u, q))
        .collect();
    ReferenceSets { theta, x, z }
}

fn sha256_of(values: impl Iterator<Item = f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

pub fn prepare_replicate(r: &Resolved, replicate: usize) -> ReplicateSetup {
    let model = &r.model;
    let seed = derive_seed(r.spec.seed, replicate as u64);
    let field = make_field_data(model, &mut rng_from(derive_seed(seed, streams::FIELD_DATA)));
    let initial = designer::initial_design(
        r.spec.initial_design,
        r.spec.n0,
        model.q(),
        field.prior(),
        &mut rng_from(derive_seed(seed, streams::INITIAL_DESIGN)),
    );
    let references = reference_sets(r, seed);

    let eta = |x: &[f64], theta: &[f64]| {
        let mut z = x.to_vec();
        z.extend_from_slice(theta);
        model.eval_unit(&z)
    };
    let true_posterior = match r.field_covariance {
        DiscrepancyMode::Known => Some(metrics::true_posterior(&field, &references.theta, eta).expect("known noise covariance is positive definite")),
        DiscrepancyMode::Fit => None,
    };
    let true_field = references.x.iter().map(|x| model.field_mean_unit(x)).collect();

    let sse = |theta: &[f64]| -> f64 { field.field_x().iter().zip(field.y().iter()).map(|(x, y)| (y - eta(x, theta)).powi(2)).sum() };
    let start = references
        .theta
        .iter()
        .min_by(|a, b| sse(a).total_cmp(&sse(b)))
        .expect("reference set is not empty")
        .clone();
    let bounds = Bounds::unit(model.p());
    let best = nelder_mead(sse, &start, 0.05, &bounds, 400 * model.p());
    let (_, stheta) = model.scaling().split(model.q());
    let best_fit = stheta.from_unit(&best.x);

    let initial_sha256 = sha256_of(initial.iter().flat_map(|z| z.as_slice().to_vec()));
    let field_sha256 = sha256_of(field.field_x().iter().flatten().copied().chain(field.y().iter().copied()));
    ReplicateSetup { replicate, seed, field, initial, references, true_posterior, true_field, best_fit, initial_sha256, field_sha256 }
}

fn natural_theta(r: &Resolved, theta: &[f64]) -> Vec<f64> {
    r.model.scaling().split(r.model.q()).1.from_unit(theta)
}

pub fn join_values(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn run_one(r: &Resolved, setup: &ReplicateSetup, method: Method) -> RunOutcome {
    let mut sim: Box<dyn Simulator> = match &r.external {
        Some(spec) => match ExternalSim::new(spec.clone()) {
            Ok(s) => Box::new(s),
            Err(err) => {
                return RunOutcome { replicate: setup.replicate, method, rows: Vec::new(), history: RunHistory::default(), error: Some(err.to_string()) }
            }
        },
        None => Box::new(r.model.simulator()),
    };
    let mut cfg = DesignConfig::new(method, r.spec.n, setup.references.clone());
    cfg.n_pair = r.n_pair;
    cfg.n_explore = r.n_explore;
    cfg.discrepancy = r.field_covariance;
    cfg.theta_fixed = Some(r.theta_fixed.clone());
    cfg.seed = derive_seed(setup.seed, streams::METHOD_BASE + method.index());
    cfg.initial_fit_starts = r.spec.fit.initial_starts;
    cfg.refit_starts = r.spec.fit.refit_starts;
    cfg.theta_hat_evals = r.spec.fit.theta_hat_evals;

    let fe = &setup.field;
    let mut rows = Vec::with_capacity(r.spec.n);
    let mut clock = Instant::now();
    let outcome = designer::run_with_observer(sim.as_mut(), fe, &setup.initial, &cfg, |view| {
        if view.record.is_none() {
            clock = Instant::now();
            return;
        }
        let mad_p = setup.true_posterior.as_ref().and_then(|truth| {
            metrics::mad_p(view.emulator, fe, &setup.references.theta, truth)
                .map_err(|e| log::warn!("{method} replicate {}: MADp failed: {e}", setup.replicate))
                .ok()
        });
        let correction = match r.field_covariance {
            DiscrepancyMode::Known => None,
            DiscrepancyMode::Fit => field_residuals(view.emulator, fe, view.theta_hat).ok().and_then(|res| {
                let fit = fit_discrepancy(fe, &res).ok()?;
                metrics::discrepancy_mean(&fit.params, fe.field_x(), &res, &setup.references.x).ok()
            }),
        };
        let mad_y = metrics::mad_y(view.emulator, &setup.references.x, view.theta_hat, &setup.true_field, correction.as_deref())
            .map_err(|e| log::warn!("{method} replicate {}: MADy failed: {e}", setup.replicate))
            .ok();
        rows.push(ResultRow {
            replicate: setup.replicate,
            iteration: view.iteration,
            method,
            mad_p,
            mad_y,
            theta_hat: join_values(&natural_theta(r, view.theta_hat)),
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        clock = Instant::now();
    });
    let (history, error) = match outcome {
        Ok(h) => (h, None),
        Err(failure) => {
            log::error!("{method} replicate {}: {failure}", setup.replicate);
            let msg = failure.to_string();
            (failure.history, Some(msg))
        }
    };
    RunOutcome { replicate: setup.replicate, method, rows, history, error }
}

/// Worker count: `SEQCAL_WORKERS` overrides the spec, which overrides the
/// number of available cores.
pub fn worker_count(spec_workers: Option<usize>) -> usize {
    std::env::var("SEQCAL_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .or(spec_workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn run_experiment(r: &Resolved, workers: usize) -> ExperimentResult {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool");
    pool.install(|| {
        let replicates: Vec<ReplicateSetup> = (0..r.spec.replicates).into_par_iter().map(|k| prepare_replicate(r, k)).collect();
        let jobs: Vec<(usize, Method)> = (0..r.spec.replicates).flat_map(|k| r.spec.methods.iter().map(move |m| (k, *m))).collect();
        let runs = jobs.par_iter().map(|(k, m)| run_one(r, &replicates[*k], *m)).collect();
        ExperimentResult { replicates, runs }
    })
}

/// Statistics of the inputs acquired during one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionStats {
    /// Per parameter dimension, natural units, `α = 0.1`.
    pub interval_score: Vec<f64>,
    /// 5%–95% quantile width per design dimension, natural units.
    pub width: Vec<f64>,
    /// Share of acquired design inputs equal to a field design input.
    pub field_hit_fraction: f64,
}

pub const INTERVAL_ALPHA: f64 = 0.1;

/// `inputs` are natural-unit joint inputs split at `q`.
pub fn acquisition_stats(inputs: &[Vec<f64>], q: usize, field_x: &[Vec<f64>], best_fit: &[f64]) -> Option<AcquisitionStats> {
    if inputs.len() < 2 {
        return None;
    }
    let column = |j: usize| -> Vec<f64> { inputs.iter().map(|z| z[j]).collect() };
    let width = (0..q).map(|j| metrics::quantile_width(&column(j), 0.05, 0.95)).collect();
    let interval_score = best_fit
        .iter()
        .enumerate()
        .map(|(j, a)| metrics::interval_score(&column(q + j), INTERVAL_ALPHA, *a))
        .collect();
    let hits = inputs.iter().filter(|z| field_x.iter().any(|x| x.as_slice() == &z[..q])).count();
    Some(AcquisitionStats { interval_score, width, field_hit_fraction: hits as f64 / inputs.len() as f64 })
}

impl RunOutcome {
    pub fn natural_inputs(&self, r: &Resolved) -> Vec<Vec<f64>> {
        let scaling = r.model.scaling();
        self.history.acquired().map(|z| scaling.from_unit(z.as_slice())).collect()
    }

    pub fn stats(&self, r: &Resolved, setup: &ReplicateSetup) -> Option<AcquisitionStats> {
        let (sx, _) = r.model.scaling().split(r.model.q());
        let field_x: Vec<Vec<f64>> = setup.field.unique_x().iter().map(|x| sx.from_unit(x)).collect();
        acquisition_stats(&self.natural_inputs(r), r.model.q(), &field_x, &setup.best_fit)
    }
}

/// Median and quartiles (type-7).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            q1: metrics::quantile(values, 0.25),
            median: metrics::quantile(values, 0.5),
            q3: metrics::quantile(values, 0.75),
        })
    }
}
