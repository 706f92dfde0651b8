//! Moments of the unnormalized posterior `p̃(θ|y) = p(y|θ) p(θ)` under the
//! emulator, and the expected posterior variance after one more simulation.
//!
//! Every density is evaluated in log space and exponentiated last.

mod discrepancy;

pub use discrepancy::{fit_discrepancy, DiscrepancyFit, DiscrepancyParams};

use nalgebra::{DMatrix, DVector};
use std::f64::consts::{LN_2, PI};

use crate::error::PosteriorError;
use crate::gp::FieldEmulatorMoments;
use crate::linalg::{log_mvn_density, Cholesky};
use crate::space::Prior;

/// Relative pivot threshold used to declare `Σ + S - φ` numerically singular.
pub const FANTASY_PIVOT_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-14;

/// Residual-error model for the field observations.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseModel {
    /// Independent errors with known variance: `Σ = σ² I`.
    Known { variance: f64 },
    /// Noise plus discrepancy with the exponential covariance form.
    Discrepancy(DiscrepancyParams),
}

impl NoiseModel {
    /// Covariance between the errors of two distinct observations at `a`, `b`
    /// (`same` marks the diagonal).
    pub fn covariance(&self, a: &[f64], b: &[f64], same: bool) -> f64 {
        match self {
            NoiseModel::Known { variance } => {
                if same {
                    *variance
                } else {
                    0.0
                }
            }
            NoiseModel::Discrepancy(p) => p.covariance(a, b, same),
        }
    }

    pub fn matrix(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let d = xs.len();
        DMatrix::from_fn(d, d, |i, j| self.covariance(&xs[i], &xs[j], i == j))
    }
}

/// Field observations `y` at design inputs `xᶠ`, their error covariance `Σ`
/// and the prior on `θ`. Replicates are separate rows.
#[derive(Clone, Debug)]
pub struct FieldExperiment {
    field_x: Vec<Vec<f64>>,
    y: DVector<f64>,
    noise: NoiseModel,
    sigma: DMatrix<f64>,
    sigma_log_det: f64,
    prior: Prior,
    unique_x: Vec<Vec<f64>>,
    unique_index: Vec<usize>,
}

impl FieldExperiment {
    pub fn new(field_x: Vec<Vec<f64>>, y: Vec<f64>, noise: NoiseModel, prior: Prior) -> Result<Self, PosteriorError> {
        let d = field_x.len();
        if d == 0 {
            return Err(PosteriorError::InvalidField("no field observations".into()));
        }
        if y.len() != d {
            return Err(PosteriorError::DimensionMismatch { expected: d, got: y.len() });
        }
        let q = field_x[0].len();
        if q == 0 || field_x.iter().any(|x| x.len() != q) {
            return Err(PosteriorError::InvalidField("field inputs must share a nonzero dimension".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(PosteriorError::InvalidField("non-finite observation".into()));
        }
        let mut unique_x: Vec<Vec<f64>> = Vec::new();
        let mut unique_index = Vec::with_capacity(d);
        for x in &field_x {
            match unique_x.iter().position(|u| u == x) {
                Some(k) => unique_index.push(k),
                None => {
                    unique_index.push(unique_x.len());
                    unique_x.push(x.clone());
                }
            }
        }
        let sigma = noise.matrix(&field_x);
        let chol = Cholesky::new(&sigma, PIVOT_TOL).ok_or(PosteriorError::CovarianceSingular)?;
        Ok(Self {
            field_x,
            y: DVector::from_vec(y),
            noise,
            sigma,
            sigma_log_det: chol.log_det(),
            prior,
            unique_x,
            unique_index,
        })
    }

    /// Same observations with a different error model.
    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self, PosteriorError> {
        Self::new(self.field_x.clone(), self.y.as_slice().to_vec(), noise, self.prior.clone())
    }

    pub fn d(&self) -> usize {
        self.field_x.len()
    }

    pub fn q(&self) -> usize {
        self.field_x[0].len()
    }

    pub fn field_x(&self) -> &[Vec<f64>] {
        &self.field_x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_log_det(&self) -> f64 {
        self.sigma_log_det
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    /// Distinct field design inputs, in first-appearance order.
    pub fn unique_x(&self) -> &[Vec<f64>] {
        &self.unique_x
    }

    /// For each observation row, its index into [`Self::unique_x`].
    pub fn unique_index(&self) -> &[usize] {
        &self.unique_index
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub var: f64,
}

fn check_dims(fm: &FieldEmulatorMoments, fe: &FieldExperiment) -> Result<(), PosteriorError> {
    if fm.mean.len() != fe.d() || fm.cov.nrows() != fe.d() {
        return Err(PosteriorError::DimensionMismatch { expected: fe.d(), got: fm.mean.len() });
    }
    Ok(())
}

/// `ln(2^d π^{d/2} |Σ|^{1/2})`, the constant under the variance terms.
pub fn log_variance_prefactor(d: usize, sigma_log_det: f64) -> f64 {
    let d = d as f64;
    d * LN_2 + 0.5 * d * PI.ln() + 0.5 * sigma_log_det
}

fn log_density(residual: &[f64], cov: &DMatrix<f64>, tol: f64) -> Option<f64> {
    Cholesky::new(cov, tol).map(|c| log_mvn_density(residual, &c))
}

fn residual(fm: &FieldEmulatorMoments, fe: &FieldExperiment) -> Vec<f64> {
    (fe.y() - &fm.mean).as_slice().to_vec()
}

/// `ln f_N(y; μ, Σ + S)`.
pub fn log_likelihood_mean(fm: &FieldEmulatorMoments, fe: &FieldExperiment) -> Result<f64, PosteriorError> {
    check_dims(fm, fe)?;
    log_density(&residual(fm, fe), &(fe.sigma() + &fm.cov), PIVOT_TOL).ok_or(PosteriorError::CovarianceSingular)
}

/// Log of the first variance term `f_N(y; μ, ½Σ + S) / (2^d π^{d/2} |Σ|^{1/2})`.
pub fn log_variance_first_term(fm: &FieldEmulatorMoments, fe: &FieldExperiment) -> Result<f64, PosteriorError> {
    check_dims(fm, fe)?;
    let cov = fe.sigma() * 0.5 + &fm.cov;
    let lf = log_density(&residual(fm, fe), &cov, PIVOT_TOL).ok_or(PosteriorError::CovarianceSingular)?;
    Ok(lf - log_variance_prefactor(fe.d(), fe.sigma_log_det()))
}

/// Log of the term `f_N(y; μ, ½(Σ + S + φ)) / (2^d π^{d/2} |Σ + S - φ|^{1/2})`
/// that a candidate with fantasy matrix `φ` subtracts from the first term.
pub fn log_fantasy_term(fm: &FieldEmulatorMoments, fe: &FieldExperiment, phi: &DMatrix<f64>) -> Result<f64, PosteriorError> {
    check_dims(fm, fe)?;
    if phi.nrows() != fe.d() || phi.ncols() != fe.d() {
        return Err(PosteriorError::DimensionMismatch { expected: fe.d(), got: phi.nrows() });
    }
    let a = fe.sigma() + &fm.cov;
    let reduced = Cholesky::new(&(&a - phi), FANTASY_PIVOT_TOL).ok_or(PosteriorError::NonPositiveDeterminant)?;
    let lf = log_density(&residual(fm, fe), &((&a + phi) * 0.5), PIVOT_TOL).ok_or(PosteriorError::CovarianceSingular)?;
    Ok(lf - log_variance_prefactor(fe.d(), reduced.log_det()))
}

/// `𝔼[p̃(θ|y) | 𝒟ₜ] = f_N(y; μₜ(θ), Σ + Sₜ(θ)) p(θ)`.
pub fn posterior_mean(fm: &FieldEmulatorMoments, fe: &FieldExperiment, theta: &[f64]) -> Result<f64, PosteriorError> {
    let p = fe.prior().density(theta);
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok((log_likelihood_mean(fm, fe)? + p.ln()).exp())
}

/// `𝕍[p̃(θ|y) | 𝒟ₜ]`, clipped at zero.
pub fn posterior_var(fm: &FieldEmulatorMoments, fe: &FieldExperiment, theta: &[f64]) -> Result<f64, PosteriorError> {
    let p = fe.prior().density(theta);
    if p == 0.0 {
        return Ok(0.0);
    }
    let first = log_variance_first_term(fm, fe)?;
    let mean = log_likelihood_mean(fm, fe)?;
    let lp2 = 2.0 * p.ln();
    Ok(((first + lp2).exp() - (2.0 * mean + lp2).exp()).max(0.0))
}

pub fn posterior_moments(fm: &FieldEmulatorMoments, fe: &FieldExperiment, theta: &[f64]) -> Result<PosteriorMoments, PosteriorError> {
    Ok(PosteriorMoments { mean: posterior_mean(fm, fe, theta)?, var: posterior_var(fm, fe, theta)? })
}

/// Expected variance of the likelihood after observing the simulator at a
/// candidate whose fantasy matrix is `φ`, without the `p(θ)²` factor.
///
/// Fails with `NonPositiveDeterminant` when `Σ + S - φ` is numerically
/// singular; the caller then treats the candidate as fully informative.
pub fn expected_posterior_var(fm: &FieldEmulatorMoments, fe: &FieldExperiment, phi: &DMatrix<f64>) -> Result<f64, PosteriorError> {
    let first = log_variance_first_term(fm, fe)?;
    let second = log_fantasy_term(fm, fe, phi)?;
    Ok((first.exp() - second.exp()).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(mean: Vec<f64>, cov: DMatrix<f64>) -> FieldEmulatorMoments {
        FieldEmulatorMoments { mean: DVector::from_vec(mean), cov, min_eigenvalue: 0.0 }
    }

    fn experiment(xs: Vec<Vec<f64>>, y: Vec<f64>, var: f64) -> FieldExperiment {
        FieldExperiment::new(xs, y, NoiseModel::Known { variance: var }, Prior::unit(1)).unwrap()
    }

    #[test]
    fn mean_with_exact_emulator_is_normal_pdf() {
        let fe = experiment(vec![vec![0.5]], vec![0.3], 1.0);
        let fm = moments(vec![0.3], DMatrix::zeros(1, 1));
        let v = posterior_mean(&fm, &fe, &[0.5]).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(posterior_mean(&fm, &fe, &[1.5]).unwrap(), 0.0);
        assert_eq!(posterior_var(&fm, &fe, &[1.5]).unwrap(), 0.0);
    }

    #[test]
    fn variance_vanishes_without_emulator_uncertainty() {
        let xs = vec![vec![0.1], vec![0.4], vec![0.9]];
        let fe = experiment(xs, vec![0.2, -0.1, 0.5], 0.04);
        let fm = moments(vec![0.1, 0.0, 0.45], DMatrix::zeros(3, 3));
        let first = log_variance_first_term(&fm, &fe).unwrap().exp();
        let mean = log_likelihood_mean(&fm, &fe).unwrap().exp();
        assert!((first - mean * mean).abs() <= 1e-12 * first);
        assert!(posterior_var(&fm, &fe, &[0.3]).unwrap() <= 1e-12 * first);
    }

    #[test]
    fn zero_fantasy_reproduces_posterior_variance() {
        let xs = vec![vec![0.1], vec![0.4]];
        let fe = experiment(xs, vec![0.2, -0.1], 0.04);
        let s = DMatrix::from_row_slice(2, 2, &[0.05, 0.02, 0.02, 0.03]);
        let fm = moments(vec![0.1, 0.05], s);
        let e = expected_posterior_var(&fm, &fe, &DMatrix::zeros(2, 2)).unwrap();
        let v = posterior_var(&fm, &fe, &[0.3]).unwrap();
        assert!((e - v).abs() <= 1e-12 * v);
    }

    #[test]
    fn full_fantasy_removes_all_variance() {
        let xs = vec![vec![0.1], vec![0.4], vec![0.6]];
        let fe = experiment(xs, vec![0.2, -0.1, 0.3], 0.04);
        let s = DMatrix::from_row_slice(3, 3, &[0.05, 0.02, 0.01, 0.02, 0.03, 0.0, 0.01, 0.0, 0.02]);
        let fm = moments(vec![0.1, 0.05, 0.2], s.clone());
        let first = log_variance_first_term(&fm, &fe).unwrap();
        let second = log_fantasy_term(&fm, &fe, &s).unwrap();
        assert!((first - second).abs() < 1e-12);
        assert!(expected_posterior_var(&fm, &fe, &s).unwrap() <= 1e-12 * first.exp());
    }

    #[test]
    fn far_tail_stays_finite() {
        let fe = experiment(vec![vec![0.5], vec![0.6]], vec![0.0, 0.0], 1.0);
        let fm = moments(vec![40.0, -40.0], DMatrix::zeros(2, 2));
        let m = posterior_mean(&fm, &fe, &[0.5]).unwrap();
        let v = posterior_var(&fm, &fe, &[0.5]).unwrap();
        assert!(m.is_finite() && v.is_finite());
        assert!(log_likelihood_mean(&fm, &fe).unwrap().is_finite());
    }

    #[test]
    fn replicates_share_a_unique_input() {
        let fe = experiment(vec![vec![0.1], vec![0.3], vec![0.1]], vec![0.0; 3], 1.0);
        assert_eq!(fe.unique_x(), &[vec![0.1], vec![0.3]]);
        assert_eq!(fe.unique_index(), &[0, 1, 0]);
    }
}
