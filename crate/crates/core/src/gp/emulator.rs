use nalgebra::{DMatrix, DVector};

use super::{correlation, KernelParams, SimDataset, Standardization};
use crate::error::GpError;
use crate::linalg::{clip_psd, dot, Cholesky};
use crate::space::JointInput;

const MAX_JITTER: f64 = 1e-2;
const VARIANCE_TOL: f64 = 1e-8;

/// Predictive mean and variance of the latent simulator output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

/// Emulator moments of the simulator output at all field inputs for one `θ`.
#[derive(Clone, Debug)]
pub struct FieldEmulatorMoments {
    pub mean: DVector<f64>,
    /// PSD-clipped covariance.
    pub cov: DMatrix<f64>,
    /// Smallest eigenvalue of the covariance before clipping.
    pub min_eigenvalue: f64,
}

/// A GP conditioned on a simulation data set. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Emulator {
    kernel: KernelParams,
    std: Standardization,
    data: SimDataset,
    q: usize,
    dim: usize,
    inputs: Vec<f64>,
    inv_ls: Vec<f64>,
    tau2: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
}

impl Emulator {
    /// Conditions on `data` at fixed hyperparameters and a fixed output
    /// standardization. The nugget is escalated tenfold (up to 1e-2) when the
    /// covariance fails to factorize.
    pub fn with_params(data: &SimDataset, kernel: KernelParams, std: Standardization) -> Result<Self, GpError> {
        let n = data.len();
        if n == 0 {
            return Err(GpError::TooFewPoints { needed: 1, got: 0 });
        }
        let dim = data.dim().unwrap_or(0);
        if kernel.dim() != dim {
            return Err(GpError::DimensionMismatch { expected: kernel.dim(), got: dim });
        }
        let q = data.q().unwrap_or(0);
        let inputs: Vec<f64> = data.inputs().iter().flat_map(|z| z.as_slice().iter().copied()).collect();
        let inv_ls = kernel.inv_lengthscales();
        let tau2 = kernel.tau2();

        let mut base = vec![0.0; n * n];
        for i in 0..n {
            let zi = &inputs[i * dim..(i + 1) * dim];
            for j in 0..i {
                base[i * n + j] = tau2 * correlation(zi, &inputs[j * dim..(j + 1) * dim], &inv_ls);
            }
        }
        let mut nugget = kernel.nugget;
        let chol = loop {
            let mut k = base.clone();
            for i in 0..n {
                k[i * n + i] = tau2 + nugget;
            }
            if let Some(c) = Cholesky::from_row_major(k, n, 1e-14) {
                break c;
            }
            if nugget >= MAX_JITTER {
                return Err(GpError::EmulatorSingular { nugget });
            }
            nugget = (nugget * 10.0).min(MAX_JITTER);
            log::warn!("kernel matrix not positive definite; raising nugget to {nugget:e}");
        };
        let y: Vec<f64> = data.outputs().iter().map(|v| std.apply(*v)).collect();
        let alpha = chol.solve(&y).as_slice().to_vec();
        let kernel = KernelParams { nugget, ..kernel };
        Ok(Self { kernel, std, data: data.clone(), q, dim, inputs, inv_ls, tau2, chol, alpha })
    }

    /// Same hyperparameters and standardization, with extra training records.
    pub fn condition_on(&self, extra: &[(JointInput, f64)]) -> Result<Self, GpError> {
        let mut data = self.data.clone();
        for (z, y) in extra {
            data.push(z.clone(), *y)?;
        }
        Self::with_params(&data, self.kernel.clone(), self.std)
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn standardization(&self) -> Standardization {
        self.std
    }

    pub fn data(&self) -> &SimDataset {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.dim - self.q
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Prior variance `τ²` in output units.
    pub fn output_tau2(&self) -> f64 {
        self.tau2 * self.std.scale * self.std.scale
    }

    /// Nugget `υ` in output units.
    pub fn output_nugget(&self) -> f64 {
        self.kernel.nugget * self.std.scale * self.std.scale
    }

    fn check_dim(&self, z: &[f64]) -> Result<(), GpError> {
        if z.len() == self.dim {
            Ok(())
        } else {
            Err(GpError::DimensionMismatch { expected: self.dim, got: z.len() })
        }
    }

    /// Standardized prior covariance between two inputs.
    #[inline]
    pub(crate) fn prior_cov_std(&self, a: &[f64], b: &[f64]) -> f64 {
        self.tau2 * correlation(a, b, &self.inv_ls)
    }

    /// `L⁻¹ k(z)` in standardized units, where `K = L Lᵀ`.
    pub(crate) fn whiten(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut w: Vec<f64> = (0..n)
            .map(|i| self.prior_cov_std(z, &self.inputs[i * self.dim..(i + 1) * self.dim]))
            .collect();
        self.chol.solve_lower_in_place(&mut w);
        w
    }

    /// Standardized latent mean from an unwhitened cross-covariance vector.
    fn mean_std(&self, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, a) in self.alpha.iter().enumerate() {
            s += a * self.prior_cov_std(z, &self.inputs[i * self.dim..(i + 1) * self.dim]);
        }
        s
    }

    /// Clips a standardized variance, rejecting values below `-1e-8 τ²`.
    pub(crate) fn clip_var_std(&self, v: f64) -> Result<f64, GpError> {
        if v >= 0.0 {
            Ok(v)
        } else if v >= -VARIANCE_TOL * self.tau2 {
            Ok(0.0)
        } else {
            Err(GpError::NegativeVariance { value: v })
        }
    }

    /// Output-unit scale factor for variances.
    #[inline]
    pub(crate) fn var_scale(&self) -> f64 {
        self.std.scale * self.std.scale
    }

    /// Predictive mean in output units (no variance).
    pub fn mean_at(&self, z: &[f64]) -> Result<f64, GpError> {
        self.check_dim(z)?;
        Ok(self.std.invert(self.mean_std(z)))
    }

    pub fn predict_at(&self, z: &[f64]) -> Result<Prediction, GpError> {
        self.check_dim(z)?;
        let w = self.whiten(z);
        let var = self.clip_var_std(self.tau2 - dot(&w, &w))?;
        Ok(Prediction { mean: self.std.invert(self.mean_std(z)), var: var * self.var_scale() })
    }

    pub fn predict(&self, z: &JointInput) -> Result<Prediction, GpError> {
        self.predict_at(z.as_slice())
    }

    /// Posterior covariance `covₜ(a, b)` in output units.
    pub fn covariance_at(&self, a: &[f64], b: &[f64]) -> Result<f64, GpError> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        let wa = self.whiten(a);
        let wb = self.whiten(b);
        Ok((self.prior_cov_std(a, b) - dot(&wa, &wb)) * self.var_scale())
    }

    pub fn covariance(&self, a: &JointInput, b: &JointInput) -> Result<f64, GpError> {
        self.covariance_at(a.as_slice(), b.as_slice())
    }

    /// Moments `μₜ(θ)`, `Sₜ(θ)` at the joint inputs `(xᵢᶠ, θ)`.
    pub fn predict_field(&self, theta: &[f64], field_x: &[Vec<f64>]) -> Result<FieldEmulatorMoments, GpError> {
        let zs: Vec<Vec<f64>> = field_x.iter().map(|x| join(x, theta)).collect();
        for z in &zs {
            self.check_dim(z)?;
        }
        let ws: Vec<Vec<f64>> = zs.iter().map(|z| self.whiten(z)).collect();
        let d = zs.len();
        let mean = DVector::from_fn(d, |i, _| self.std.invert(self.mean_std(&zs[i])));
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let c = (self.prior_cov_std(&zs[i], &zs[j]) - dot(&ws[i], &ws[j])) * self.var_scale();
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        let min_eigenvalue = clip_psd(&mut cov);
        Ok(FieldEmulatorMoments { mean, cov, min_eigenvalue })
    }

    /// `ς²ₜ(z*) + υ` in output units: the predictive variance of a new
    /// simulation output at `z*`.
    pub fn fantasy_denominator(&self, z_star: &[f64]) -> Result<f64, GpError> {
        Ok(self.predict_at(z_star)?.var + self.output_nugget())
    }

    /// `φₜ(θ, z*)ᵢⱼ = covₜ(zᵢᶠ, z*) covₜ(zⱼᶠ, z*) / (ς²ₜ(z*) + υ)`.
    pub fn fantasy_cross_cov(&self, z_star: &JointInput, theta: &[f64], field_x: &[Vec<f64>]) -> Result<DMatrix<f64>, GpError> {
        let zs = z_star.as_slice();
        let denom = self.fantasy_denominator(zs)?;
        assert!(denom > 0.0, "fantasy denominator must be positive");
        let c: Vec<f64> = field_x
            .iter()
            .map(|x| self.covariance_at(&join(x, theta), zs))
            .collect::<Result<_, _>>()?;
        let d = c.len();
        Ok(DMatrix::from_fn(d, d, |i, j| c[i] * c[j] / denom))
    }

    /// Mean at `z` after observing `η*` at `z*`, by the rank-1 update.
    pub fn fantasy_update_mean(&self, z: &JointInput, z_star: &JointInput, eta_star: f64) -> Result<f64, GpError> {
        let m = self.mean_at(z.as_slice())?;
        let m_star = self.mean_at(z_star.as_slice())?;
        let c = self.covariance(z, z_star)?;
        Ok(m + c * (eta_star - m_star) / self.fantasy_denominator(z_star.as_slice())?)
    }

    /// Variance at `z` after observing any output at `z*`, by the rank-1 update.
    pub fn fantasy_update_var(&self, z: &JointInput, z_star: &JointInput) -> Result<f64, GpError> {
        let v = self.predict(z)?.var;
        let c = self.covariance(z, z_star)?;
        Ok((v - c * c / self.fantasy_denominator(z_star.as_slice())?).max(0.0))
    }
}

pub(crate) fn join(x: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(x.len() + theta.len());
    z.extend_from_slice(x);
    z.extend_from_slice(theta);
    z
}
