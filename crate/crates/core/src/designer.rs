//! The sequential design loop: fit, estimate, score, evaluate, refit.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::acquisition::{self, build_candidates, lhs_sample, ApScorer, AyScorer, ImspeScorer, MaxVarScorer, Scorer};
use crate::error::{DesignError, GpError, SimError};
use crate::gp::{fit, Emulator, FitConfig, KernelParams, SimDataset};
use crate::optim::{nelder_mead, Bounds};
use crate::posterior::{fit_discrepancy, DiscrepancyParams, FieldExperiment, NoiseModel};
use crate::rng::{derive_seed, rng_from};
use crate::space::{JointInput, Prior};
use crate::testbeds::Simulator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Expected posterior variance.
    Ap,
    /// Expected variance of the field-response likelihood at the current estimate.
    Ay,
    /// As `Ay`, but at a fixed parameter value.
    AyFixed,
    Rnd,
    Lhs,
    /// Largest emulator variance.
    Var,
    Imspe,
}

impl Method {
    pub const ALL: [Method; 7] = [Method::Ap, Method::Ay, Method::AyFixed, Method::Rnd, Method::Lhs, Method::Var, Method::Imspe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ap => "ap",
            Method::Ay => "ay",
            Method::AyFixed => "ay-fixed",
            Method::Rnd => "rnd",
            Method::Lhs => "lhs",
            Method::Var => "var",
            Method::Imspe => "imspe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase();
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Stable index used to derive per-method seed streams.
    pub fn index(self) -> u64 {
        Self::ALL.iter().position(|m| *m == self).expect("listed") as u64
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How the field covariance is obtained at each iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscrepancyMode {
    /// Use the experiment's noise model as given.
    #[default]
    Known,
    /// Refit the noise-plus-discrepancy covariance from residuals every iteration.
    Fit,
}

/// Reference sets in scaled coordinates.
#[derive(Clone, Debug, Default)]
pub struct ReferenceSets {
    pub theta: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub z: Vec<JointInput>,
}

#[derive(Clone, Debug)]
pub struct DesignConfig {
    pub method: Method,
    /// Number of sequential acquisitions.
    pub n: usize,
    /// Shared prior draws paired with each distinct field input.
    pub n_pair: usize,
    /// Joint uniform exploration candidates.
    pub n_explore: usize,
    pub references: ReferenceSets,
    pub discrepancy: DiscrepancyMode,
    /// Parameter used by [`Method::AyFixed`].
    pub theta_fixed: Option<Vec<f64>>,
    pub seed: u64,
    pub initial_fit_starts: usize,
    /// Optimizer starts per refit, counting the warm start.
    pub refit_starts: usize,
    pub theta_hat_evals: usize,
}

impl DesignConfig {
    pub fn new(method: Method, n: usize, references: ReferenceSets) -> Self {
        Self {
            method,
            n,
            n_pair: 100,
            n_explore: 500,
            references,
            discrepancy: DiscrepancyMode::Known,
            theta_fixed: None,
            seed: 0,
            initial_fit_starts: 8,
            refit_starts: 2,
            theta_hat_evals: 200,
        }
    }

    fn validate(&self, fe: &FieldExperiment, initial: &[JointInput]) -> Result<(), DesignError> {
        let bad = |m: &str| Err(DesignError::Config(m.to_string()));
        if self.n == 0 {
            return bad("the acquisition budget must be positive");
        }
        if initial.len() < 2 {
            return bad("the initial design needs at least two points");
        }
        let (q, p) = (fe.q(), fe.prior().dim());
        if initial.iter().any(|z| z.q() != q || z.p() != p) {
            return bad("initial design dimensions do not match the field experiment");
        }
        if self.references.theta.is_empty() {
            return bad("the parameter reference set is empty");
        }
        if self.references.theta.iter().any(|t| t.len() != p) {
            return bad("parameter reference points have the wrong dimension");
        }
        match self.method {
            Method::Ap | Method::Ay | Method::AyFixed | Method::Var | Method::Imspe => {
                if self.n_pair * fe.unique_x().len() + self.n_explore == 0 {
                    return bad("no candidates requested");
                }
            }
            Method::Rnd | Method::Lhs => {}
        }
        match self.method {
            Method::Ay | Method::AyFixed if self.references.x.is_empty() => return bad("the design-input reference set is empty"),
            Method::Imspe if self.references.z.is_empty() => return bad("the joint reference set is empty"),
            Method::AyFixed => match &self.theta_fixed {
                Some(t) if t.len() == p => {}
                _ => return bad("ay-fixed needs a parameter value of the right dimension"),
            },
            _ => {}
        }
        if self.discrepancy == DiscrepancyMode::Fit && fe.d() < 3 {
            return bad("fitting a discrepancy needs at least three field observations");
        }
        if self.initial_fit_starts == 0 || self.refit_starts == 0 {
            return bad("fits need at least one optimizer start");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub input: JointInput,
    pub output: f64,
    /// Estimate from the emulator refitted after this acquisition.
    pub theta_hat: Vec<f64>,
    pub kernel: KernelParams,
    /// Covariance used to score this iteration's candidates.
    pub discrepancy: Option<DiscrepancyParams>,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunHistory {
    pub initial: Vec<(JointInput, f64)>,
    pub initial_theta_hat: Vec<f64>,
    pub records: Vec<IterationRecord>,
}

impl RunHistory {
    pub fn acquired(&self) -> impl Iterator<Item = &JointInput> {
        self.records.iter().map(|r| &r.input)
    }

    pub fn dataset(&self) -> SimDataset {
        let mut d = SimDataset::new();
        for (z, y) in self.initial.iter().cloned().chain(self.records.iter().map(|r| (r.input.clone(), r.output))) {
            d.push(z, y).expect("history holds validated records");
        }
        d
    }
}

/// A run that stopped early, with everything completed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: DesignError,
    pub history: RunHistory,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run stopped after {} acquisitions: {}", self.history.records.len(), self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// State handed to observers after the initial fit (`record == None`) and
/// after every refit.
pub struct StepView<'a> {
    pub iteration: usize,
    pub emulator: &'a Emulator,
    pub theta_hat: &'a [f64],
    pub record: Option<&'a IterationRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialDesign {
    /// Independent draws: uniform design inputs, prior parameters.
    #[default]
    Uniform,
    /// Maximin Latin hypercube over design inputs and the prior box.
    Lhs,
}

pub fn initial_design<R: rand::Rng + ?Sized>(kind: InitialDesign, n0: usize, q: usize, prior: &Prior, rng: &mut R) -> Vec<JointInput> {
    match kind {
        InitialDesign::Uniform => (0..n0)
            .map(|_| {
                let x: Vec<f64> = (0..q).map(|_| rng.gen::<f64>()).collect();
                JointInput::new(&x, &prior.sample(rng))
            })
            .collect(),
        InitialDesign::Lhs => lhs_sample(n0, q + prior.dim(), rng)
            .into_iter()
            .map(|u| JointInput::new(&u[..q], &prior.from_unit(&u[q..])))
            .collect(),
    }
}

pub fn run(sim: &mut dyn Simulator, fe: &FieldExperiment, initial: &[JointInput], cfg: &DesignConfig) -> Result<RunHistory, RunFailure> {
    run_with_observer(sim, fe, initial, cfg, |_| {})
}

pub fn run_with_observer<F>(
    sim: &mut dyn Simulator,
    fe: &FieldExperiment,
    initial: &[JointInput],
    cfg: &DesignConfig,
    mut observer: F,
) -> Result<RunHistory, RunFailure>
where
    F: FnMut(&StepView<'_>),
{
    let mut history = RunHistory::default();
    macro_rules! bail {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(err) => return Err(RunFailure { error: err.into(), history }),
            }
        };
    }
    bail!(cfg.validate(fe, initial));

    let mut data = SimDataset::new();
    for z in initial {
        let y = bail!(evaluate_with_retry(sim, z));
        bail!(data.push(z.clone(), y));
        history.initial.push((z.clone(), y));
    }
    let fit_cfg = FitConfig { n_starts: cfg.initial_fit_starts, seed: derive_seed(cfg.seed, 0), ..FitConfig::default() };
    let mut emulator = bail!(fit(&data, &fit_cfg));
    let mut theta_hat = bail!(estimate_theta_hat(&emulator, fe, &cfg.references.theta, cfg.theta_hat_evals));
    history.initial_theta_hat = theta_hat.clone();
    observer(&StepView { iteration: 0, emulator: &emulator, theta_hat: &theta_hat, record: None });

    let mut rng = rng_from(derive_seed(cfg.seed, u64::MAX));
    let lhs_plan: Vec<JointInput> = match cfg.method {
        Method::Lhs => initial_design(InitialDesign::Lhs, cfg.n, fe.q(), fe.prior(), &mut rng),
        _ => Vec::new(),
    };

    for t in 1..=cfg.n {
        let started = Instant::now();
        let (field, discrepancy) = match cfg.discrepancy {
            DiscrepancyMode::Known => (None, None),
            DiscrepancyMode::Fit => {
                let residuals = bail!(field_residuals(&emulator, fe, &theta_hat));
                let fitted = bail!(fit_discrepancy(fe, &residuals));
                let f = bail!(fe.with_noise(NoiseModel::Discrepancy(fitted.params)));
                (Some(f), Some(fitted.params))
            }
        };
        let field = field.as_ref().unwrap_or(fe);

        let z_new = match cfg.method {
            Method::Rnd => initial_design(InitialDesign::Uniform, 1, fe.q(), fe.prior(), &mut rng).remove(0),
            Method::Lhs => lhs_plan[t - 1].clone(),
            method => {
                let candidates = build_candidates(field, fe.prior(), cfg.n_pair, cfg.n_explore, &mut rng);
                let refs = &cfg.references;
                let scores = match method {
                    Method::Ap => scores_of(ApScorer::new(&emulator, field, &refs.theta), &candidates),
                    Method::Ay => scores_of(AyScorer::new(&emulator, field, &refs.x, &theta_hat), &candidates),
                    Method::AyFixed => {
                        let fixed = cfg.theta_fixed.as_ref().expect("validated");
                        scores_of(AyScorer::new(&emulator, field, &refs.x, fixed), &candidates)
                    }
                    Method::Var => Ok(acquisition::score_all(&MaxVarScorer::new(&emulator), &candidates)),
                    Method::Imspe => scores_of(ImspeScorer::new(&emulator, &refs.z), &candidates),
                    Method::Rnd | Method::Lhs => unreachable!(),
                };
                let scores = bail!(scores);
                candidates[bail!(acquisition::select(&scores))].clone()
            }
        };

        let y = bail!(evaluate_with_retry(sim, &z_new));
        bail!(data.push(z_new.clone(), y));
        let refit_cfg = FitConfig {
            n_starts: cfg.refit_starts,
            seed: derive_seed(cfg.seed, t as u64),
            warm_start: Some(emulator.kernel().clone()),
            ..FitConfig::default()
        };
        emulator = bail!(fit(&data, &refit_cfg));
        theta_hat = bail!(estimate_theta_hat(&emulator, fe, &cfg.references.theta, cfg.theta_hat_evals));
        history.records.push(IterationRecord {
            iteration: t,
            input: z_new,
            output: y,
            theta_hat: theta_hat.clone(),
            kernel: emulator.kernel().clone(),
            discrepancy,
            elapsed: started.elapsed(),
        });
        observer(&StepView { iteration: t, emulator: &emulator, theta_hat: &theta_hat, record: history.records.last() });
    }
    Ok(history)
}

fn scores_of<S: Scorer>(scorer: Result<S, crate::error::AcquisitionError>, candidates: &[JointInput]) -> Result<Vec<f64>, crate::error::AcquisitionError> {
    Ok(acquisition::score_all(&scorer?, candidates))
}

fn evaluate_with_retry(sim: &mut dyn Simulator, z: &JointInput) -> Result<f64, SimError> {
    match sim.evaluate(z) {
        Ok(v) => Ok(v),
        Err(first) => {
            log::warn!("simulator failed ({first}); retrying once");
            sim.evaluate(z)
        }
    }
}

/// `y - μₜ(xᶠ, θ)` at every field observation.
pub fn field_residuals(e: &Emulator, fe: &FieldExperiment, theta: &[f64]) -> Result<Vec<f64>, GpError> {
    let means = unique_means(e, fe, theta)?;
    Ok(fe.y().iter().zip(fe.unique_index()).map(|(y, u)| y - means[*u]).collect())
}

fn unique_means(e: &Emulator, fe: &FieldExperiment, theta: &[f64]) -> Result<Vec<f64>, GpError> {
    let mut z = Vec::with_capacity(fe.q() + theta.len());
    fe.unique_x()
        .iter()
        .map(|x| {
            z.clear();
            z.extend_from_slice(x);
            z.extend_from_slice(theta);
            e.mean_at(&z)
        })
        .collect()
}

const THETA_HAT_SEEDS: usize = 3;

/// Least-squares parameter estimate `argmin_θ Σ (yᵢ - μₜ(xᵢ, θ))²` over the
/// prior box: the best reference points seed bounded Nelder–Mead searches.
pub fn estimate_theta_hat(e: &Emulator, fe: &FieldExperiment, theta_ref: &[Vec<f64>], max_evals: usize) -> Result<Vec<f64>, GpError> {
    let sse = |theta: &[f64]| -> Result<f64, GpError> {
        let means = unique_means(e, fe, theta)?;
        Ok(fe.y().iter().zip(fe.unique_index()).map(|(y, u)| (y - means[*u]).powi(2)).sum())
    };
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(theta_ref.len());
    for (i, t) in theta_ref.iter().enumerate() {
        ranked.push((sse(t)?, i));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut best_f, best_i) = ranked[0];
    let mut best = theta_ref[best_i].clone();
    if max_evals == 0 {
        return Ok(best);
    }
    let prior = fe.prior();
    let bounds = Bounds::new(prior.lower().to_vec(), prior.upper().to_vec());
    for (_, i) in ranked.iter().take(THETA_HAT_SEEDS) {
        let m = nelder_mead(|t| sse(t).unwrap_or(f64::INFINITY), &theta_ref[*i], 0.05, &bounds, max_evals);
        if m.f < best_f {
            best_f = m.f;
            best = m.x;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbeds::{make_field_data, SyntheticModel};

    fn grid(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
    }

    fn setup(method: Method, n: usize) -> (SyntheticModel, FieldExperiment, Vec<JointInput>, DesignConfig) {
        let model = SyntheticModel::sine2d(false);
        let fe = make_field_data(&model, &mut rng_from(2));
        let init = initial_design(InitialDesign::Uniform, 10, 1, fe.prior(), &mut rng_from(1));
        let refs = ReferenceSets {
            theta: grid(30),
            x: grid(30),
            z: grid(30).into_iter().zip(grid(30).into_iter().rev()).map(|(x, t)| JointInput::new(&x, &t)).collect(),
        };
        let mut cfg = DesignConfig::new(method, n, refs);
        cfg.n_pair = 20;
        cfg.n_explore = 50;
        cfg.seed = 9;
        cfg.theta_fixed = Some(vec![0.5]);
        (model, fe, init, cfg)
    }

    #[test]
    fn every_method_completes_and_is_deterministic() {
        for method in Method::ALL {
            let (model, fe, init, cfg) = setup(method, 3);
            let a = run(&mut model.simulator(), &fe, &init, &cfg).unwrap();
            let b = run(&mut model.simulator(), &fe, &init, &cfg).unwrap();
            assert_eq!(a.records.len(), 3, "{method}");
            for (ra, rb) in a.records.iter().zip(&b.records) {
                assert_eq!(ra.input, rb.input, "{method}");
                assert_eq!(ra.output, rb.output);
            }
            assert_eq!(a.dataset().len(), 13);
            assert!(a.acquired().all(|z| z.in_unit_box()));
        }
    }

    #[test]
    fn zero_budget_is_a_config_error() {
        let (model, fe, init, cfg) = setup(Method::Ap, 0);
        let err = run(&mut model.simulator(), &fe, &init, &cfg).unwrap_err();
        assert!(matches!(err.error, DesignError::Config(_)));
        assert!(err.history.initial.is_empty());
    }

    #[test]
    fn observer_sees_initial_fit_and_every_refit() {
        let (model, fe, init, cfg) = setup(Method::Var, 2);
        let mut seen = Vec::new();
        run_with_observer(&mut model.simulator(), &fe, &init, &cfg, |v| {
            seen.push((v.iteration, v.record.is_some(), v.emulator.n()));
        })
        .unwrap();
        assert_eq!(seen, vec![(0, false, 10), (1, true, 11), (2, true, 12)]);
    }

    #[test]
    fn fitted_discrepancy_is_recorded() {
        let (model, fe, init, mut cfg) = setup(Method::Ay, 2);
        cfg.discrepancy = DiscrepancyMode::Fit;
        let h = run(&mut model.simulator(), &fe, &init, &cfg).unwrap();
        assert!(h.records.iter().all(|r| r.discrepancy.is_some()));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (model, fe, init, mut cfg) = setup(Method::AyFixed, 1);
        cfg.theta_fixed = None;
        let err = run(&mut model.simulator(), &fe, &init, &cfg).unwrap_err();
        assert!(matches!(err.error, DesignError::Config(_)));
        let (model, fe, _, cfg) = setup(Method::Ap, 1);
        let err = run(&mut model.simulator(), &fe, &[], &cfg).unwrap_err();
        assert!(matches!(err.error, DesignError::Config(_)));
    }

    #[test]
    fn theta_hat_recovers_truth_with_exact_emulator() {
        let model = SyntheticModel::sine2d(false);
        let fe = make_field_data(&model, &mut rng_from(4));
        let mut rng = rng_from(5);
        let init = initial_design(InitialDesign::Lhs, 60, 1, fe.prior(), &mut rng);
        let data = SimDataset::from_records(init.iter().map(|z| (z.clone(), model.eval_unit(z.as_slice()))).collect()).unwrap();
        let e = fit(&data, &FitConfig::default()).unwrap();
        let th = estimate_theta_hat(&e, &fe, &grid(50), 200).unwrap();
        assert!((th[0] - model.theta_true_unit()[0]).abs() < 0.1, "{th:?}");
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse("AP"), Some(Method::Ap));
        assert_eq!(Method::parse("nope"), None);
    }
}
