use seqcal::designer::{
    estimate_theta_hat, initial_design, run, run_with_observer, DesignConfig, InitialDesign, Method, ReferenceSets,
};
use seqcal::error::{DesignError, SimError};
use seqcal::gp::{fit, FitConfig, SimDataset};
use seqcal::posterior::{FieldExperiment, NoiseModel};
use seqcal::rng::{derive_seed, rng_from, streams};
use seqcal::space::{JointInput, Prior};
use seqcal::testbeds::{eval_sine2d, make_field_data, Simulator, SyntheticModel};

const FIELD_X: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

fn grid(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
}

fn sine_setup(seed: u64) -> (SyntheticModel, FieldExperiment, Vec<JointInput>) {
    let model = SyntheticModel::sine2d(false);
    let fe = make_field_data(&model, &mut rng_from(derive_seed(seed, streams::FIELD_DATA)));
    let init = initial_design(InitialDesign::Uniform, 10, 1, fe.prior(), &mut rng_from(derive_seed(seed, streams::INITIAL_DESIGN)));
    (model, fe, init)
}

fn sine_config(method: Method, n: usize, seed: u64) -> DesignConfig {
    let refs = ReferenceSets {
        theta: grid(100),
        x: grid(100),
        z: seqcal::acquisition::lhs_sample(100, 2, &mut rng_from(derive_seed(seed, streams::REFERENCE)))
            .into_iter()
            .map(|v| JointInput::from_concat(v, 1))
            .collect(),
    };
    let mut cfg = DesignConfig::new(method, n, refs);
    cfg.seed = seed;
    cfg
}

fn on_field_design(x: f64) -> bool {
    FIELD_X.iter().any(|f| *f == x)
}

#[test]
fn ap_on_sine_acquires_only_field_design_inputs() {
    let (model, fe, init) = sine_setup(1);
    let h = run(&mut model.simulator(), &fe, &init, &sine_config(Method::Ap, 20, 1)).unwrap();
    assert_eq!(h.dataset().len(), 30);
    for z in h.acquired() {
        assert!(on_field_design(z.design()[0]), "acquired x = {}", z.design()[0]);
    }
}

#[test]
fn ay_on_sine_explores_beyond_the_field_design() {
    let (model, fe, init) = sine_setup(2);
    let h = run(&mut model.simulator(), &fe, &init, &sine_config(Method::Ay, 30, 2)).unwrap();
    let mut outside: Vec<f64> = h.acquired().map(|z| z.design()[0]).filter(|x| !on_field_design(*x)).collect();
    outside.sort_by(f64::total_cmp);
    outside.dedup();
    assert!(outside.len() >= 3, "distinct non-field inputs: {outside:?}");
}

/// Asymptotic Kolmogorov–Smirnov p-value for a sample against U(0, 1).
fn ks_uniform_p(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100).map(|k| 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp()).sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn ks_helper_rejects_a_skewed_sample() {
    let skewed: Vec<f64> = (0..200).map(|i| (i as f64 / 200.0).powi(3)).collect();
    assert!(ks_uniform_p(skewed) < 1e-6);
    let even: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).collect();
    assert!(ks_uniform_p(even) > 0.99);
}

#[test]
fn rnd_acquisitions_are_uniform_over_the_box() {
    let (mut xs, mut ts) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let (model, fe, init) = sine_setup(10 + seed);
        let h = run(&mut model.simulator(), &fe, &init, &sine_config(Method::Rnd, 20, 10 + seed)).unwrap();
        assert_eq!(h.dataset().len(), 30);
        xs.extend(h.acquired().map(|z| z.design()[0]));
        ts.extend(h.acquired().map(|z| z.params()[0]));
    }
    let (px, pt) = (ks_uniform_p(xs), ks_uniform_p(ts));
    assert!(px > 0.01 && pt > 0.01, "KS p-values x {px}, θ {pt}");
}

#[test]
fn dataset_grows_by_one_record_per_iteration() {
    let (model, fe, init) = sine_setup(3);
    let mut seen: Vec<SimDataset> = Vec::new();
    run_with_observer(&mut model.simulator(), &fe, &init, &sine_config(Method::Imspe, 6, 3), |v| {
        assert_eq!(v.emulator.n(), 10 + v.iteration);
        seen.push(v.emulator.data().clone());
    })
    .unwrap();
    for w in seen.windows(2) {
        assert_eq!(&w[1].inputs()[..w[0].len()], w[0].inputs());
        assert_eq!(&w[1].outputs()[..w[0].len()], w[0].outputs());
    }
}

#[test]
fn same_seed_gives_the_same_trajectory() {
    for method in [Method::Ap, Method::Ay, Method::Var] {
        let (model, fe, init) = sine_setup(4);
        let cfg = sine_config(method, 5, 4);
        let a = run(&mut model.simulator(), &fe, &init, &cfg).unwrap();
        let b = run(&mut model.simulator(), &fe, &init, &cfg).unwrap();
        let ia: Vec<_> = a.acquired().cloned().collect();
        let ib: Vec<_> = b.acquired().cloned().collect();
        assert_eq!(ia, ib, "{method}");
    }
}

#[test]
fn theta_hat_with_a_near_exact_emulator_recovers_the_truth() {
    let truth = std::f64::consts::PI / 5.0;
    let n = 16;
    let records: Vec<(JointInput, f64)> = (0..n * n)
        .map(|k| {
            let (x, t) = ((k / n) as f64 / (n - 1) as f64, (k % n) as f64 / (n - 1) as f64);
            (JointInput::new(&[x], &[t]), eval_sine2d(x, t))
        })
        .collect();
    let e = fit(&SimDataset::from_records(records).unwrap(), &FitConfig::default()).unwrap();
    let xs: Vec<Vec<f64>> = FIELD_X.iter().flat_map(|x| [vec![*x], vec![*x]]).collect();
    let y: Vec<f64> = xs.iter().map(|x| eval_sine2d(x[0], truth)).collect();
    let fe = FieldExperiment::new(xs, y, NoiseModel::Known { variance: 0.04 }, Prior::unit(1)).unwrap();
    let a = estimate_theta_hat(&e, &fe, &grid(100), 200).unwrap();
    assert!((a[0] - truth).abs() < 0.02, "θ̂ = {a:?}");
    assert_eq!(estimate_theta_hat(&e, &fe, &grid(100), 200).unwrap(), a);
}

#[test]
fn theta_hat_with_a_flat_emulator_is_the_first_reference_point() {
    let data = SimDataset::from_records((0..6).map(|i| (JointInput::new(&[i as f64 / 5.0], &[0.5]), 2.0)).collect()).unwrap();
    let e = fit(&data, &FitConfig::default()).unwrap();
    let fe = FieldExperiment::new(vec![vec![0.4]], vec![1.0], NoiseModel::Known { variance: 0.04 }, Prior::unit(1)).unwrap();
    let refs = vec![vec![0.3], vec![0.7], vec![0.1]];
    assert_eq!(estimate_theta_hat(&e, &fe, &refs, 200).unwrap(), vec![0.3]);
}

/// Fails on the listed call numbers, otherwise evaluates the sine.
struct Flaky {
    calls: usize,
    fail_on: Vec<usize>,
}

impl Simulator for Flaky {
    fn q(&self) -> usize {
        1
    }
    fn p(&self) -> usize {
        1
    }
    fn evaluate(&mut self, z: &JointInput) -> Result<f64, SimError> {
        self.calls += 1;
        if self.fail_on.contains(&self.calls) {
            return Err(SimError::SimCrashed(Some(1)));
        }
        Ok(eval_sine2d(z.design()[0], z.params()[0]))
    }
}

#[test]
fn a_single_simulator_failure_is_retried() {
    let (_, fe, init) = sine_setup(5);
    let mut sim = Flaky { calls: 0, fail_on: vec![12] };
    let h = run(&mut sim, &fe, &init, &sine_config(Method::Rnd, 4, 5)).unwrap();
    assert_eq!(h.records.len(), 4);
    assert_eq!(sim.calls, 15);
}

#[test]
fn a_repeated_failure_stops_the_run_with_partial_history() {
    let (_, fe, init) = sine_setup(6);
    let mut sim = Flaky { calls: 0, fail_on: vec![13, 14] };
    let err = run(&mut sim, &fe, &init, &sine_config(Method::Rnd, 5, 6)).unwrap_err();
    assert_eq!(err.history.records.len(), 2);
    assert_eq!(err.history.initial.len(), 10);
    assert!(matches!(err.error, DesignError::Simulator(SimError::SimCrashed(_))), "{err}");
}
