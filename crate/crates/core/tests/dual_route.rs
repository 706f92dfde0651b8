//! The cached rank-1 scorers against the dense formulas built from the
//! posterior module.

use seqcal::acquisition::{ApScorer, AyScorer, ImspeScorer, MaxVarScorer, Scorer};
use seqcal::gp::{fit, Emulator, FitConfig, SimDataset};
use seqcal::posterior::{self, DiscrepancyParams, FieldExperiment, NoiseModel};
use seqcal::rng::rng_from;
use seqcal::space::JointInput;
use seqcal::testbeds::{make_field_data, SyntheticModel};

use rand::Rng;

fn emulator_for(model: &SyntheticModel, n: usize, seed: u64) -> Emulator {
    let mut rng = rng_from(seed);
    let dim = model.q() + model.p();
    let records = (0..n)
        .map(|_| {
            let u: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
            let y = model.eval_unit(&u);
            (JointInput::from_concat(u, model.q()), y)
        })
        .collect();
    let data = SimDataset::from_records(records).unwrap();
    fit(&data, &FitConfig { n_starts: 3, seed, ..FitConfig::default() }).unwrap()
}

fn candidates(q: usize, p: usize, n: usize, seed: u64) -> Vec<JointInput> {
    let mut rng = rng_from(seed);
    (0..n)
        .map(|_| JointInput::from_concat((0..q + p).map(|_| rng.gen()).collect(), q))
        .collect()
}

fn dense_ap_terms(e: &Emulator, fe: &FieldExperiment, theta_ref: &[Vec<f64>], z: &JointInput) -> Vec<f64> {
    theta_ref
        .iter()
        .map(|theta| {
            let fm = e.predict_field(theta, fe.field_x()).unwrap();
            let phi = e.fantasy_cross_cov(z, theta, fe.field_x()).unwrap();
            posterior::log_fantasy_term(&fm, fe, &phi).unwrap() + 2.0 * fe.prior().density(theta).ln()
        })
        .collect()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{what}: fast {x} vs dense {y}");
    }
}

#[test]
fn ap_fast_route_matches_dense_route_sine() {
    let model = SyntheticModel::sine2d(false);
    let fe = make_field_data(&model, &mut rng_from(11));
    let e = emulator_for(&model, 14, 3);
    let theta_ref: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 / 8.0]).collect();
    let scorer = ApScorer::new(&e, &fe, &theta_ref).unwrap();
    for z in candidates(1, 1, 25, 5) {
        assert_close(&scorer.log_terms(&z).unwrap(), &dense_ap_terms(&e, &fe, &theta_ref, &z), 1e-9, "Ap sine");
    }
}

#[test]
fn ap_fast_route_matches_dense_route_ranjan_with_discrepancy_covariance() {
    let model = SyntheticModel::ranjan3d(false);
    let fe = make_field_data(&model, &mut rng_from(12));
    let fe = fe
        .with_noise(NoiseModel::Discrepancy(DiscrepancyParams { sigma_eps2: 0.3, sigma_b2: 2.0, lambda: 1.5 }))
        .unwrap();
    let e = emulator_for(&model, 25, 4);
    let theta_ref: Vec<Vec<f64>> = (0..6).map(|i| vec![0.1 + i as f64 / 7.0]).collect();
    let scorer = ApScorer::new(&e, &fe, &theta_ref).unwrap();
    for z in candidates(2, 1, 15, 6) {
        assert_close(&scorer.log_terms(&z).unwrap(), &dense_ap_terms(&e, &fe, &theta_ref, &z), 1e-9, "Ap ranjan");
    }
}

#[test]
fn ap_candidate_on_a_field_input_uses_the_cached_inputs() {
    let model = SyntheticModel::sine2d(false);
    let fe = make_field_data(&model, &mut rng_from(13));
    let e = emulator_for(&model, 12, 7);
    let theta_ref = vec![vec![0.2], vec![0.6]];
    let scorer = ApScorer::new(&e, &fe, &theta_ref).unwrap();
    let z = JointInput::new(&fe.unique_x()[2], &[0.6]);
    assert_close(&scorer.log_terms(&z).unwrap(), &dense_ap_terms(&e, &fe, &theta_ref, &z), 1e-9, "Ap on field input");
}

#[test]
fn ay_fast_route_matches_augmented_dense_route() {
    for (model, seed) in [(SyntheticModel::sine2d(false), 21u64), (SyntheticModel::ranjan3d(false), 22)] {
        let fe = make_field_data(&model, &mut rng_from(seed));
        let noise_models = [
            fe.noise().clone(),
            NoiseModel::Discrepancy(DiscrepancyParams { sigma_eps2: 0.2, sigma_b2: 0.5, lambda: 2.0 }),
        ];
        for noise in noise_models {
            let fe = fe.with_noise(noise).unwrap();
            let e = emulator_for(&model, 20, seed);
            let q = model.q();
            let x_ref: Vec<Vec<f64>> = candidates(q, 0, 6, seed + 1).into_iter().map(|z| z.design().to_vec()).collect();
            let theta_hat = vec![0.55];
            let scorer = AyScorer::new(&e, &fe, &x_ref, &theta_hat).unwrap();
            for z in candidates(q, 1, 10, seed + 2) {
                let dense: Vec<f64> = x_ref
                    .iter()
                    .map(|x| {
                        let mut xs = fe.field_x().to_vec();
                        xs.push(x.clone());
                        let mut ys: Vec<f64> = fe.y().iter().copied().collect();
                        ys.push(e.mean_at(&JointInput::new(x, &theta_hat).as_slice().to_vec()).unwrap());
                        let aug = FieldExperiment::new(xs.clone(), ys, fe.noise().clone(), fe.prior().clone()).unwrap();
                        let fm = e.predict_field(&theta_hat, &xs).unwrap();
                        let phi = e.fantasy_cross_cov(&z, &theta_hat, &xs).unwrap();
                        posterior::log_fantasy_term(&fm, &aug, &phi).unwrap()
                    })
                    .collect();
                assert_close(&scorer.log_terms(&z).unwrap(), &dense, 1e-9, "Ay");
            }
        }
    }
}

#[test]
fn variance_scorers_match_direct_predictions() {
    let model = SyntheticModel::ranjan3d(false);
    let e = emulator_for(&model, 20, 31);
    let z_ref = candidates(2, 1, 30, 32);
    let imspe = ImspeScorer::new(&e, &z_ref).unwrap();
    let maxvar = MaxVarScorer::new(&e);
    let total: f64 = z_ref.iter().map(|z| e.predict(z).unwrap().var).sum();
    assert!((imspe.total_variance() - total).abs() <= 1e-9 * total);
    for z in candidates(2, 1, 10, 33) {
        assert_eq!(maxvar.score(&z).unwrap(), e.predict(&z).unwrap().var);
        let after: f64 = z_ref.iter().map(|r| e.fantasy_update_var(r, &z).unwrap()).sum();
        let s = imspe.score(&z).unwrap();
        assert!((s + after).abs() <= 1e-8 * total, "imspe {s} vs {}", -after);
    }
}
