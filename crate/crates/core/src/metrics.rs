//! Evaluation metrics: posterior and field-prediction errors, interval score
//! and quantile widths of acquired inputs.

use crate::error::{GpError, PosteriorError};
use crate::gp::Emulator;
use crate::linalg::{log_mvn_density, Cholesky};
use crate::posterior::{self, DiscrepancyParams, FieldExperiment};

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" rule). `values` need not be sorted.
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&prob));
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// `S_α(l, u; a)` for a given interval.
pub fn interval_score_bounds(l: f64, u: f64, alpha: f64, a: f64) -> f64 {
    let mut s = u - l;
    if a < l {
        s += 2.0 / alpha * (l - a);
    }
    if a > u {
        s += 2.0 / alpha * (a - u);
    }
    s
}

/// Interval score of the central `1-α` empirical interval of `values`
/// against the reference value `a`.
pub fn interval_score(values: &[f64], alpha: f64, a: f64) -> f64 {
    assert!(values.len() >= 2, "interval score needs at least two values");
    assert!(alpha > 0.0 && alpha < 1.0);
    let l = quantile(values, alpha / 2.0);
    let u = quantile(values, 1.0 - alpha / 2.0);
    interval_score_bounds(l, u, alpha, a)
}

/// `Q_hi - Q_lo` of the sample.
pub fn quantile_width(values: &[f64], lo: f64, hi: f64) -> f64 {
    assert!(values.len() >= 2, "quantile width needs at least two values");
    quantile(values, hi) - quantile(values, lo)
}

/// True unnormalized posterior `p(y|θ) p(θ)` on the reference set, using the
/// exact simulator `eta(x, θ)` (both arguments scaled).
pub fn true_posterior<F>(fe: &FieldExperiment, theta_ref: &[Vec<f64>], eta: F) -> Result<Vec<f64>, PosteriorError>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let chol = Cholesky::new(fe.sigma(), 1e-14).ok_or(PosteriorError::CovarianceSingular)?;
    Ok(theta_ref
        .iter()
        .map(|theta| {
            let p = fe.prior().density(theta);
            if p == 0.0 {
                return 0.0;
            }
            let r: Vec<f64> = fe.field_x().iter().zip(fe.y().iter()).map(|(x, y)| y - eta(x, theta)).collect();
            (log_mvn_density(&r, &chol) + p.ln()).exp()
        })
        .collect())
}

/// Mean absolute difference between the true posterior and the emulator's
/// posterior mean over the reference set.
pub fn mad_p(e: &Emulator, fe: &FieldExperiment, theta_ref: &[Vec<f64>], truth: &[f64]) -> Result<f64, MetricError> {
    assert_eq!(theta_ref.len(), truth.len());
    let mut total = 0.0;
    for (theta, t) in theta_ref.iter().zip(truth) {
        let fm = e.predict_field(theta, fe.field_x())?;
        total += (t - posterior::posterior_mean(&fm, fe, theta)?).abs();
    }
    Ok(total / theta_ref.len() as f64)
}

/// Mean absolute error of the field prediction `mₜ(x, θ̂) + b̂(x)` against
/// the true field mean over the reference inputs. `correction` holds `b̂(x)`
/// when a discrepancy model is in use.
pub fn mad_y(e: &Emulator, x_ref: &[Vec<f64>], theta_hat: &[f64], truth: &[f64], correction: Option<&[f64]>) -> Result<f64, GpError> {
    assert_eq!(x_ref.len(), truth.len());
    let mut total = 0.0;
    for (i, (x, t)) in x_ref.iter().zip(truth).enumerate() {
        let mut z = x.clone();
        z.extend_from_slice(theta_hat);
        let b = correction.map_or(0.0, |c| c[i]);
        total += (t - e.mean_at(&z)? - b).abs();
    }
    Ok(total / x_ref.len() as f64)
}

/// Conditional mean of the discrepancy term at new inputs given residuals at
/// the field inputs: `k_b(x)ᵀ (Σᵉ)⁻¹ r`.
pub fn discrepancy_mean(params: &DiscrepancyParams, field_x: &[Vec<f64>], residuals: &[f64], x_new: &[Vec<f64>]) -> Result<Vec<f64>, PosteriorError> {
    let chol = Cholesky::new(&params.matrix(field_x), 1e-14).ok_or(PosteriorError::CovarianceSingular)?;
    let w = chol.solve(residuals);
    Ok(x_new
        .iter()
        .map(|x| field_x.iter().zip(w.iter()).map(|(xf, wi)| params.covariance(x, xf, false) * wi).sum())
        .collect())
}

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
}
