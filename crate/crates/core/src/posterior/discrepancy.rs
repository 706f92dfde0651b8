//! Maximum-likelihood estimation of the noise-plus-discrepancy covariance
//! `Σᵉᵢⱼ = σ_ε² δᵢⱼ + σ_b² exp(-λ ‖xᵢ - xⱼ‖₁)` from field residuals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::FieldExperiment;
use crate::error::PosteriorError;
use crate::linalg::{Cholesky, LN_2PI};
use crate::optim::{minimize_box, Bounds, QuasiNewtonOptions};

const VAR_BOUNDS: (f64, f64) = (1e-8, 1e8);
const RATE_BOUNDS: (f64, f64) = (1e-2, 1e2);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyParams {
    pub sigma_eps2: f64,
    pub sigma_b2: f64,
    pub lambda: f64,
}

impl DiscrepancyParams {
    pub fn covariance(&self, a: &[f64], b: &[f64], same: bool) -> f64 {
        let dist: f64 = a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum();
        let noise = if same { self.sigma_eps2 } else { 0.0 };
        noise + self.sigma_b2 * (-self.lambda * dist).exp()
    }

    pub fn matrix(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let d = xs.len();
        DMatrix::from_fn(d, d, |i, j| self.covariance(&xs[i], &xs[j], i == j))
    }

    /// `ln N(r; 0, Σᵉ)`, or `None` if `Σᵉ` does not factorize.
    pub fn log_likelihood(&self, xs: &[Vec<f64>], residuals: &[f64]) -> Option<f64> {
        let c = Cholesky::new(&self.matrix(xs), 1e-14)?;
        Some(crate::linalg::log_mvn_density(residuals, &c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyFit {
    pub params: DiscrepancyParams,
    pub log_likelihood: f64,
    /// Set when every optimizer start failed and the fallback was returned.
    pub fallback: bool,
}

/// Fits `(σ_ε², σ_b², λ)` by multi-start bounded maximum likelihood on the
/// residuals `y - μₜ(θ̂)` (emulator covariance excluded).
pub fn fit_discrepancy(fe: &FieldExperiment, residuals: &[f64]) -> Result<DiscrepancyFit, PosteriorError> {
    let d = fe.d();
    if residuals.len() != d {
        return Err(PosteriorError::DimensionMismatch { expected: d, got: residuals.len() });
    }
    if d < 3 {
        return Err(PosteriorError::InvalidField("need at least three field observations".into()));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(PosteriorError::InvalidField("non-finite residual".into()));
    }
    let xs = fe.field_x();
    let dist: Vec<f64> = (0..d * d)
        .map(|k| {
            let (i, j) = (k / d, k % d);
            xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b).abs()).sum()
        })
        .collect();

    let bounds = Bounds::new(
        vec![VAR_BOUNDS.0.ln(), VAR_BOUNDS.0.ln(), RATE_BOUNDS.0.ln()],
        vec![VAR_BOUNDS.1.ln(), VAR_BOUNDS.1.ln(), RATE_BOUNDS.1.ln()],
    );
    let sample_var = residuals.iter().map(|r| r * r).sum::<f64>() / d as f64;
    let v = sample_var.clamp(VAR_BOUNDS.0, VAR_BOUNDS.1);
    let starts = [
        [0.5 * v, 0.5 * v, 1.0],
        [0.9 * v, 0.1 * v, 10.0],
        [0.1 * v, 0.9 * v, 0.1],
        [v, 1e-3 * v, 1.0],
        [1e-2 * v, v, 3.0],
    ];
    let opts = QuasiNewtonOptions { max_iter: 200, grad_tol: 1e-7, f_tol: 1e-12 };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in &starts {
        let x0: Vec<f64> = s.iter().map(|v| v.max(VAR_BOUNDS.0).ln()).collect();
        let m = minimize_box(|x, g| neg_log_lik(x, g, &dist, d, residuals), &x0, &bounds, &opts);
        if m.f.is_finite() && best.as_ref().map_or(true, |(f, _)| m.f < *f) {
            best = Some((m.f, m.x));
        }
    }
    match best {
        Some((f, x)) => Ok(DiscrepancyFit {
            params: DiscrepancyParams { sigma_eps2: x[0].exp(), sigma_b2: x[1].exp(), lambda: x[2].exp() },
            log_likelihood: -f,
            fallback: false,
        }),
        None => {
            log::warn!("discrepancy fit failed from every start; using the residual variance");
            let params = DiscrepancyParams { sigma_eps2: v, sigma_b2: 0.0, lambda: 1.0 };
            let log_likelihood = params.log_likelihood(xs, residuals).unwrap_or(f64::NEG_INFINITY);
            Ok(DiscrepancyFit { params, log_likelihood, fallback: true })
        }
    }
}

/// Negative log-likelihood in `(ln σ_ε², ln σ_b², ln λ)` with its gradient.
fn neg_log_lik(x: &[f64], grad: &mut [f64], dist: &[f64], d: usize, r: &[f64]) -> f64 {
    let (se, sb, lam) = (x[0].exp(), x[1].exp(), x[2].exp());
    let mut e = vec![0.0; d * d];
    let mut k = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let v = (-lam * dist[i * d + j]).exp();
            e[i * d + j] = v;
            k[i * d + j] = sb * v + if i == j { se } else { 0.0 };
        }
    }
    let Some(chol) = Cholesky::from_row_major(k, d, 1e-14) else {
        return f64::INFINITY;
    };
    let alpha = chol.solve(r);
    let nll = 0.5 * (r.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum::<f64>() + chol.log_det() + d as f64 * LN_2PI);
    let kinv = chol.inverse_row_major();
    let (mut g_se, mut g_sb, mut g_lam) = (0.0, 0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            let w = alpha[i] * alpha[j] - kinv[i * d + j];
            let ev = e[i * d + j];
            if i == j {
                g_se += w * se;
            }
            g_sb += w * sb * ev;
            g_lam -= w * sb * ev * lam * dist[i * d + j];
        }
    }
    grad[0] = -0.5 * g_se;
    grad[1] = -0.5 * g_sb;
    grad[2] = -0.5 * g_lam;
    nll
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_central_differences() {
        let d = 6;
        let xs: Vec<f64> = (0..d).map(|i| i as f64 / 5.0).collect();
        let dist: Vec<f64> = (0..d * d).map(|k| (xs[k / d] - xs[k % d]).abs()).collect();
        let r = [0.3, -0.1, 0.4, 0.2, -0.5, 0.05];
        let x = [(0.05f64).ln(), (0.2f64).ln(), (1.5f64).ln()];
        let mut g = [0.0; 3];
        neg_log_lik(&x, &mut g, &dist, d, &r);
        for i in 0..3 {
            let h = 1e-6;
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let mut tmp = [0.0; 3];
            let fd = (neg_log_lik(&xp, &mut tmp, &dist, d, &r) - neg_log_lik(&xm, &mut tmp, &dist, d, &r)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "coord {i}: {fd} vs {}", g[i]);
        }
    }
}
