use nalgebra::DMatrix;
use rayon::prelude::*;
use std::f64::consts::{LN_2, PI};

use super::{AcquisitionContext, Scorer};
use crate::error::{AcquisitionError, PosteriorError};
use crate::gp::Emulator;
use crate::linalg::{clip_psd, dot, log_mvn_density, Cholesky, LN_2PI};
use crate::posterior::FieldExperiment;
use crate::space::JointInput;

/// `1 - cᵀA⁻¹c / s` at or below this marks `Σ + S - φ` as singular.
const SINGULAR_GUARD: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-14;

/// A joint input with its whitened cross-covariance `L⁻¹ k(z)`.
struct Point {
    z: Vec<f64>,
    w: Vec<f64>,
}

impl Point {
    fn new(e: &Emulator, z: Vec<f64>) -> Self {
        let w = e.whiten(&z);
        Self { z, w }
    }

    /// Standardized posterior covariance with another point.
    fn cov_std(&self, e: &Emulator, other: &Point) -> f64 {
        e.prior_cov_std(&self.z, &other.z) - dot(&self.w, &other.w)
    }
}

/// A candidate `z*` prepared for rank-1 scoring.
struct Fantasy {
    point: Point,
    /// `ς²ₜ(z*) + υ` in output units.
    denom: f64,
}

impl Fantasy {
    fn new(e: &Emulator, z: &JointInput) -> Result<Self, AcquisitionError> {
        if z.dim() != e.dim() {
            return Err(crate::error::GpError::DimensionMismatch { expected: e.dim(), got: z.dim() }.into());
        }
        let point = Point::new(e, z.as_slice().to_vec());
        let var = e.clip_var_std(e.kernel().tau2() - dot(&point.w, &point.w))?;
        let denom = (var + e.kernel().nugget) * e.var_scale();
        Ok(Self { point, denom })
    }

    /// `covₜ(z, z*)` in output units.
    fn cross(&self, e: &Emulator, p: &Point) -> f64 {
        p.cov_std(e, &self.point) * e.var_scale()
    }
}

/// Everything about one reference point that does not depend on the
/// candidate: the factor of `A = Σ + S`, the whitened residual and the log
/// of the zero-information term.
struct Block {
    chol_a: Cholesky,
    v: Vec<f64>,
    /// Log of the `φ = 0` term, prior factor included.
    log_base: f64,
    /// Log of the first variance term, the supremum of the candidate term.
    log_sup: f64,
}

impl Block {
    fn new(
        sigma: &DMatrix<f64>,
        sigma_log_det: f64,
        s: &DMatrix<f64>,
        residual: &[f64],
        log_prior2: f64,
    ) -> Result<Self, PosteriorError> {
        let d = residual.len();
        let df = d as f64;
        let chol_a = Cholesky::new(&(sigma + s), PIVOT_TOL).ok_or(PosteriorError::CovarianceSingular)?;
        let v = chol_a.solve_lower(residual).as_slice().to_vec();
        let rar = dot(&v, &v);
        let log_base = -0.5 * df * LN_2PI + 0.5 * df * LN_2 - df * LN_2 - 0.5 * df * PI.ln() - chol_a.log_det() - rar
            + log_prior2;
        let half = Cholesky::new(&(sigma * 0.5 + s), PIVOT_TOL).ok_or(PosteriorError::CovarianceSingular)?;
        let log_sup = log_mvn_density(residual, &half) - (df * LN_2 + 0.5 * df * PI.ln() + 0.5 * sigma_log_det)
            + log_prior2;
        Ok(Self { chol_a, v, log_base, log_sup })
    }

    /// Log of `f_N(y; μ, ½(A + φ)) / (2^d π^{d/2} |A - φ|^{1/2})` for
    /// `φ = c cᵀ / s`, via the matrix determinant lemma and Sherman–Morrison.
    fn log_term(&self, c: &mut [f64], s: f64) -> f64 {
        self.chol_a.solve_lower_in_place(c);
        let g = dot(c, c) / s;
        if 1.0 - g <= SINGULAR_GUARD {
            return self.log_sup;
        }
        let h = dot(&self.v, c);
        self.log_base - 0.5 * (1.0 + g).ln() - 0.5 * (1.0 - g).ln() + h * h / (s * (1.0 + g))
    }
}

fn log_mean_exp(logs: &[f64], n: usize) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + (logs.iter().map(|l| (l - m).exp()).sum::<f64>() / n as f64).ln()
}

fn join(x: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut z = x.to_vec();
    z.extend_from_slice(theta);
    z
}

/// Covariance among `points` (output units), expanded to observation rows.
fn emulator_cov(e: &Emulator, points: &[&Point], rows: &[usize]) -> DMatrix<f64> {
    let k = points.len();
    let mut small = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let c = points[i].cov_std(e, points[j]) * e.var_scale();
            small[(i, j)] = c;
            small[(j, i)] = c;
        }
    }
    let d = rows.len();
    let mut s = DMatrix::from_fn(d, d, |i, j| small[(rows[i], rows[j])]);
    clip_psd(&mut s);
    s
}

struct ThetaCache {
    points: Vec<Point>,
    block: Block,
}

/// Posterior-targeted criterion: average over `Θ_ref` of the expected
/// reduction term, weighted by `p(θ)²`.
pub struct ApScorer<'a> {
    e: &'a Emulator,
    rows: Vec<usize>,
    caches: Vec<ThetaCache>,
    n_ref: usize,
}

impl<'a> ApScorer<'a> {
    pub fn new(e: &'a Emulator, fe: &FieldExperiment, theta_ref: &[Vec<f64>]) -> Result<Self, AcquisitionError> {
        if theta_ref.is_empty() {
            return Err(AcquisitionError::MissingReference("theta_ref"));
        }
        let rows = fe.unique_index().to_vec();
        let caches = theta_ref
            .par_iter()
            .filter_map(|theta| {
                let p = fe.prior().density(theta);
                (p > 0.0).then(|| Self::cache(e, fe, &rows, theta, 2.0 * p.ln()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { e, rows, caches, n_ref: theta_ref.len() })
    }

    fn cache(e: &Emulator, fe: &FieldExperiment, rows: &[usize], theta: &[f64], log_prior2: f64) -> Result<ThetaCache, AcquisitionError> {
        let points: Vec<Point> = fe.unique_x().iter().map(|x| Point::new(e, join(x, theta))).collect();
        let means: Vec<f64> = points.iter().map(|p| e.mean_at(&p.z)).collect::<Result<_, _>>()?;
        let refs: Vec<&Point> = points.iter().collect();
        let s = emulator_cov(e, &refs, rows);
        let residual: Vec<f64> = fe.y().iter().zip(rows).map(|(y, r)| y - means[*r]).collect();
        let block = Block::new(fe.sigma(), fe.sigma_log_det(), &s, &residual, log_prior2)?;
        Ok(ThetaCache { points, block })
    }

    /// Per-reference log terms, in `Θ_ref` order (zero-prior points skipped).
    pub fn log_terms(&self, z_star: &JointInput) -> Result<Vec<f64>, AcquisitionError> {
        let f = Fantasy::new(self.e, z_star)?;
        let mut c_unique = Vec::new();
        let mut c = vec![0.0; self.rows.len()];
        Ok(self
            .caches
            .iter()
            .map(|tc| {
                c_unique.clear();
                c_unique.extend(tc.points.iter().map(|p| f.cross(self.e, p)));
                for (ci, r) in c.iter_mut().zip(&self.rows) {
                    *ci = c_unique[*r];
                }
                tc.block.log_term(&mut c, f.denom)
            })
            .collect())
    }

    /// Per-reference log terms with no information gained (`φ = 0`).
    pub fn log_baseline_terms(&self) -> Vec<f64> {
        self.caches.iter().map(|tc| tc.block.log_base).collect()
    }
}

impl Scorer for ApScorer<'_> {
    fn score(&self, z_star: &JointInput) -> Result<f64, AcquisitionError> {
        Ok(log_mean_exp(&self.log_terms(z_star)?, self.n_ref).exp())
    }
}

/// Field-prediction criterion: average over `𝒳_ref` of the expected
/// reduction term for the data augmented with `(x, mₜ(x, θ̂))`.
pub struct AyScorer<'a> {
    e: &'a Emulator,
    rows: Vec<usize>,
    field_points: Vec<Point>,
    x_points: Vec<Point>,
    blocks: Vec<Block>,
}

impl<'a> AyScorer<'a> {
    pub fn new(e: &'a Emulator, fe: &FieldExperiment, x_ref: &[Vec<f64>], theta_hat: &[f64]) -> Result<Self, AcquisitionError> {
        if x_ref.is_empty() {
            return Err(AcquisitionError::MissingReference("x_ref"));
        }
        let d = fe.d();
        let n_unique = fe.unique_x().len();
        let p = fe.prior().density(theta_hat);
        if p <= 0.0 {
            return Err(AcquisitionError::Posterior(PosteriorError::InvalidField(
                "parameter estimate outside the prior support".into(),
            )));
        }
        let log_prior2 = 2.0 * p.ln();
        let field_points: Vec<Point> = fe.unique_x().iter().map(|x| Point::new(e, join(x, theta_hat))).collect();
        let field_means: Vec<f64> = field_points.iter().map(|pt| e.mean_at(&pt.z)).collect::<Result<_, _>>()?;
        let x_points: Vec<Point> = x_ref.par_iter().map(|x| Point::new(e, join(x, theta_hat))).collect();
        let mut rows = fe.unique_index().to_vec();
        rows.push(n_unique);

        let blocks = x_ref
            .par_iter()
            .zip(&x_points)
            .map(|(x, xp)| {
                let mut refs: Vec<&Point> = field_points.iter().collect();
                refs.push(xp);
                let s = emulator_cov(e, &refs, &rows);
                let mut sigma = DMatrix::zeros(d + 1, d + 1);
                sigma.view_mut((0, 0), (d, d)).copy_from(fe.sigma());
                for (i, xf) in fe.field_x().iter().enumerate() {
                    let v = fe.noise().covariance(x, xf, false);
                    sigma[(i, d)] = v;
                    sigma[(d, i)] = v;
                }
                sigma[(d, d)] = fe.noise().covariance(x, x, true);
                let sigma_chol = Cholesky::new(&sigma, PIVOT_TOL).ok_or(PosteriorError::CovarianceSingular)?;
                let mut residual: Vec<f64> = fe.y().iter().zip(&rows).map(|(y, r)| y - field_means[*r]).collect();
                // The plug-in observation at x is the emulator mean itself.
                residual.push(0.0);
                Ok(Block::new(&sigma, sigma_chol.log_det(), &s, &residual, log_prior2)?)
            })
            .collect::<Result<Vec<_>, AcquisitionError>>()?;
        Ok(Self { e, rows, field_points, x_points, blocks })
    }

    pub fn log_terms(&self, z_star: &JointInput) -> Result<Vec<f64>, AcquisitionError> {
        let f = Fantasy::new(self.e, z_star)?;
        let c_field: Vec<f64> = self.field_points.iter().map(|p| f.cross(self.e, p)).collect();
        let d = self.rows.len() - 1;
        let mut c = vec![0.0; d + 1];
        Ok(self
            .blocks
            .iter()
            .zip(&self.x_points)
            .map(|(block, xp)| {
                for (ci, r) in c[..d].iter_mut().zip(&self.rows) {
                    *ci = c_field[*r];
                }
                c[d] = f.cross(self.e, xp);
                block.log_term(&mut c, f.denom)
            })
            .collect())
    }
}

impl Scorer for AyScorer<'_> {
    fn score(&self, z_star: &JointInput) -> Result<f64, AcquisitionError> {
        let terms = self.log_terms(z_star)?;
        Ok(log_mean_exp(&terms, terms.len()).exp())
    }
}

/// Maximum predictive variance `ς²ₜ(z*)`.
pub struct MaxVarScorer<'a> {
    e: &'a Emulator,
}

impl<'a> MaxVarScorer<'a> {
    pub fn new(e: &'a Emulator) -> Self {
        Self { e }
    }
}

impl Scorer for MaxVarScorer<'_> {
    fn score(&self, z_star: &JointInput) -> Result<f64, AcquisitionError> {
        Ok(self.e.predict(z_star)?.var)
    }
}

/// Negated aggregate predictive variance over `Z_ref` after the rank-1
/// fantasy update at the candidate.
pub struct ImspeScorer<'a> {
    e: &'a Emulator,
    points: Vec<Point>,
    total_var: f64,
}

impl<'a> ImspeScorer<'a> {
    pub fn new(e: &'a Emulator, z_ref: &[JointInput]) -> Result<Self, AcquisitionError> {
        if z_ref.is_empty() {
            return Err(AcquisitionError::MissingReference("z_ref"));
        }
        let points: Vec<Point> = z_ref.par_iter().map(|z| Point::new(e, z.as_slice().to_vec())).collect();
        let mut total_var = 0.0;
        for p in &points {
            total_var += e.clip_var_std(e.kernel().tau2() - dot(&p.w, &p.w))? * e.var_scale();
        }
        Ok(Self { e, points, total_var })
    }

    /// Current aggregate variance `Σ ς²ₜ(z)` over the reference set.
    pub fn total_variance(&self) -> f64 {
        self.total_var
    }
}

impl Scorer for ImspeScorer<'_> {
    fn score(&self, z_star: &JointInput) -> Result<f64, AcquisitionError> {
        let f = Fantasy::new(self.e, z_star)?;
        let reduction: f64 = self.points.iter().map(|p| f.cross(self.e, p).powi(2)).sum::<f64>() / f.denom;
        Ok(-(self.total_var - reduction))
    }
}

pub fn score_ap(e: &Emulator, fe: &FieldExperiment, ctx: &AcquisitionContext, z_star: &JointInput) -> Result<f64, AcquisitionError> {
    ApScorer::new(e, fe, &ctx.theta_ref)?.score(z_star)
}

pub fn score_ay(e: &Emulator, fe: &FieldExperiment, ctx: &AcquisitionContext, z_star: &JointInput) -> Result<f64, AcquisitionError> {
    let theta_hat = ctx.theta_hat.as_deref().ok_or(AcquisitionError::MissingThetaHat)?;
    AyScorer::new(e, fe, &ctx.x_ref, theta_hat)?.score(z_star)
}

pub fn score_maxvar(e: &Emulator, z_star: &JointInput) -> Result<f64, AcquisitionError> {
    MaxVarScorer::new(e).score(z_star)
}

pub fn score_imspe(e: &Emulator, ctx: &AcquisitionContext, z_star: &JointInput) -> Result<f64, AcquisitionError> {
    ImspeScorer::new(e, &ctx.z_ref)?.score(z_star)
}
