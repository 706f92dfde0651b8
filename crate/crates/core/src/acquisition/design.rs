use rand::seq::SliceRandom;
use rand::Rng;

use crate::posterior::FieldExperiment;
use crate::space::{JointInput, Prior};

/// Pairs every distinct field design input with `n_pair` shared prior draws,
/// then appends `n_explore` draws from the joint box (uniform design inputs,
/// prior parameters).
pub fn build_candidates<R: Rng + ?Sized>(
    fe: &FieldExperiment,
    prior: &Prior,
    n_pair: usize,
    n_explore: usize,
    rng: &mut R,
) -> Vec<JointInput> {
    let thetas: Vec<Vec<f64>> = (0..n_pair).map(|_| prior.sample(rng)).collect();
    let mut out = Vec::with_capacity(fe.unique_x().len() * n_pair + n_explore);
    for x in fe.unique_x() {
        for t in &thetas {
            out.push(JointInput::new(x, t));
        }
    }
    let q = fe.q();
    for _ in 0..n_explore {
        let x: Vec<f64> = (0..q).map(|_| rng.gen::<f64>()).collect();
        out.push(JointInput::new(&x, &prior.sample(rng)));
    }
    out
}

/// `n` independent uniform points in `[0,1]^dims`.
pub fn uniform_sample<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dims).map(|_| rng.gen::<f64>()).collect()).collect()
}

const LHS_TRIES: usize = 10;

/// Latin hypercube sample: the design with the largest minimum pairwise
/// distance among ten random ones.
pub fn lhs_sample<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    assert!(n >= 1, "LHS needs at least one point");
    let mut best = random_lhs(n, dims, rng);
    let mut best_d = min_pairwise_sq(&best);
    for _ in 1..LHS_TRIES {
        let cand = random_lhs(n, dims, rng);
        let d = min_pairwise_sq(&cand);
        if d > best_d {
            best = cand;
            best_d = d;
        }
    }
    best
}

fn random_lhs<R: Rng + ?Sized>(n: usize, dims: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dims]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..dims {
        perm.shuffle(rng);
        for (i, p) in perm.iter().enumerate() {
            // Clamp guards the open upper stratum edge against rounding.
            let v = (*p as f64 + rng.gen::<f64>()) / n as f64;
            pts[i][j] = v.min((*p as f64 + 1.0) / n as f64 - f64::EPSILON).max(*p as f64 / n as f64);
        }
    }
    pts
}

pub(crate) fn min_pairwise_sq(pts: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..pts.len() {
        for j in 0..i {
            let d: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d);
        }
    }
    best
}
