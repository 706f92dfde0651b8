//! Hyperparameter fitting by multi-start maximization of the log marginal
//! likelihood of the standardized outputs.

use rand::Rng as _;

use super::{Emulator, KernelParams, SimDataset, Standardization};
use crate::error::GpError;
use crate::linalg::{Cholesky, LN_2PI};
use crate::optim::{minimize_box, Bounds, QuasiNewtonOptions};
use crate::rng::rng_from;

/// Box constraints on the fitted hyperparameters (standardized units).
#[derive(Clone, Debug, PartialEq)]
pub struct HyperBounds {
    pub inv_lengthscale: (f64, f64),
    pub tau2: (f64, f64),
    pub nugget: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self { inv_lengthscale: (1e-2, 1e3), tau2: (1e-3, 1e3), nugget: (1e-8, 1.0) }
    }
}

impl HyperBounds {
    fn log_bounds(&self, dim: usize) -> Bounds {
        let mut lo = vec![self.inv_lengthscale.0.ln(); dim];
        let mut hi = vec![self.inv_lengthscale.1.ln(); dim];
        lo.push(self.tau2.0.ln());
        hi.push(self.tau2.1.ln());
        lo.push(self.nugget.0.ln());
        hi.push(self.nugget.1.ln());
        Bounds::new(lo, hi)
    }
}

#[derive(Clone, Debug)]
pub struct FitConfig {
    /// Total optimizer starts, including the warm or default start.
    pub n_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Used as the first start when given.
    pub warm_start: Option<KernelParams>,
    pub bounds: HyperBounds,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 8,
            seed: 0,
            max_iter: 200,
            grad_tol: 1e-5,
            warm_start: None,
            bounds: HyperBounds::default(),
        }
    }
}

/// Fits kernel hyperparameters and returns the conditioned emulator.
pub fn fit(data: &SimDataset, config: &FitConfig) -> Result<Emulator, GpError> {
    let n = data.len();
    if n < 2 {
        return Err(GpError::TooFewPoints { needed: 2, got: n });
    }
    let dim = data.dim().unwrap_or(0);
    let std = Standardization::from_outputs(data.outputs());
    let y: Vec<f64> = data.outputs().iter().map(|v| std.apply(*v)).collect();

    if y.iter().all(|v| *v == 0.0) {
        // Constant outputs: nothing to learn, keep the emulator pinned to the constant.
        let nugget = config.bounds.nugget.0;
        let kernel = KernelParams::new(vec![0.0; dim], nugget, nugget);
        return Emulator::with_params(data, kernel, std);
    }

    let bounds = config.bounds.log_bounds(dim);
    let mut work = LmlWorkspace::new(data, y);
    let opts = QuasiNewtonOptions { max_iter: config.max_iter, grad_tol: config.grad_tol, f_tol: 1e-10 };

    let mut starts = Vec::with_capacity(config.n_starts.max(1));
    starts.push(match &config.warm_start {
        Some(k) if k.dim() == dim => pack(k),
        _ => pack(&KernelParams::new(vec![2f64.ln(); dim], 1.0, 1e-4)),
    });
    let mut rng = rng_from(config.seed);
    for _ in 1..config.n_starts {
        let mut x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5f64.ln()..20f64.ln())).collect();
        x.push(rng.gen_range(0.3f64.ln()..3f64.ln()));
        x.push(rng.gen_range(1e-8f64.ln()..1e-2f64.ln()));
        starts.push(x);
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for x0 in &starts {
        let mut x0 = x0.clone();
        bounds.project(&mut x0);
        let m = minimize_box(|x, g| work.neg_lml(x, Some(g)), &x0, &bounds, &opts);
        if m.f.is_finite() && best.as_ref().map_or(true, |(f, _)| m.f < *f) {
            best = Some((m.f, m.x));
        }
    }
    let x = match best {
        Some((_, x)) => x,
        None => starts[0].clone(),
    };
    let kernel = unpack(&x, dim);
    Emulator::with_params(data, kernel, std)
}

/// Log marginal likelihood of the standardized outputs at given kernel
/// parameters, or `None` when the covariance does not factorize.
pub fn log_marginal_likelihood(data: &SimDataset, kernel: &KernelParams) -> Option<f64> {
    let std = Standardization::from_outputs(data.outputs());
    let y = data.outputs().iter().map(|v| std.apply(*v)).collect();
    let mut work = LmlWorkspace::new(data, y);
    let v = work.neg_lml(&pack(kernel), None);
    v.is_finite().then_some(-v)
}

fn pack(k: &KernelParams) -> Vec<f64> {
    let mut x = k.log_inv_lengthscales.clone();
    x.push(k.log_tau2);
    x.push(k.nugget.ln());
    x
}

fn unpack(x: &[f64], dim: usize) -> KernelParams {
    KernelParams {
        log_inv_lengthscales: x[..dim].to_vec(),
        log_tau2: x[dim],
        nugget: x[dim + 1].exp(),
    }
}

/// Pairwise distances cached once per fit; `pairs` is laid out as
/// `(i, j)` for `i > j` in row order, `dim` entries per pair.
struct LmlWorkspace {
    n: usize,
    dim: usize,
    y: Vec<f64>,
    pairs: Vec<f64>,
    corr: Vec<f64>,
}

impl LmlWorkspace {
    fn new(data: &SimDataset, y: Vec<f64>) -> Self {
        let n = data.len();
        let dim = data.dim().unwrap_or(0);
        let inputs = data.inputs();
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2 * dim);
        for i in 0..n {
            let zi = inputs[i].as_slice();
            for zj in &inputs[..i] {
                pairs.extend(zi.iter().zip(zj.as_slice()).map(|(a, b)| (a - b).abs()));
            }
        }
        Self { n, dim, y, pairs, corr: vec![0.0; n * (n - 1) / 2] }
    }

    /// Negative log marginal likelihood at packed `x`; writes its gradient
    /// when requested. Returns `+inf` when the covariance is not PD.
    fn neg_lml(&mut self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (n, dim) = (self.n, self.dim);
        let a: Vec<f64> = x[..dim].iter().map(|v| v.exp()).collect();
        let tau2 = x[dim].exp();
        let ups = x[dim + 1].exp();
        if !tau2.is_finite() || !ups.is_finite() {
            return f64::INFINITY;
        }

        let mut k = vec![0.0; n * n];
        let mut p = 0;
        for i in 0..n {
            for j in 0..i {
                let r = &self.pairs[p * dim..(p + 1) * dim];
                let mut s = 0.0;
                let mut prod = 1.0;
                for (al, rl) in a.iter().zip(r) {
                    let ar = al * rl;
                    s += ar;
                    prod *= 1.0 + ar;
                }
                let c = prod * (-s).exp();
                self.corr[p] = c;
                k[i * n + j] = tau2 * c;
                p += 1;
            }
            k[i * n + i] = tau2 + ups;
        }
        let Some(chol) = Cholesky::from_row_major(k, n, 1e-14) else {
            return f64::INFINITY;
        };
        let alpha = chol.solve(&self.y);
        let fit_term: f64 = self.y.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
        let nll = 0.5 * (fit_term + chol.log_det() + n as f64 * LN_2PI);

        let Some(grad) = grad else {
            return nll;
        };
        let kinv = chol.inverse_row_major();
        // d(lml)/dθ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)
        let mut g_tau = 0.0;
        let mut g_ups = 0.0;
        for i in 0..n {
            let w = alpha[i] * alpha[i] - kinv[i * n + i];
            g_tau += 0.5 * w * tau2;
            g_ups += 0.5 * w * ups;
        }
        let g_zeta = &mut grad[..dim];
        g_zeta.iter_mut().for_each(|v| *v = 0.0);
        let mut p = 0;
        for i in 0..n {
            for j in 0..i {
                // Off-diagonal pairs appear twice in the trace.
                let w = alpha[i] * alpha[j] - kinv[i * n + j];
                let wc = w * tau2 * self.corr[p];
                g_tau += wc;
                let r = &self.pairs[p * dim..(p + 1) * dim];
                for ((g, al), rl) in g_zeta.iter_mut().zip(&a).zip(r) {
                    let ar = al * rl;
                    *g -= wc * ar * ar / (1.0 + ar);
                }
                p += 1;
            }
        }
        for g in g_zeta.iter_mut() {
            *g = -*g;
        }
        grad[dim] = -g_tau;
        grad[dim + 1] = -g_ups;
        nll
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::JointInput;

    fn toy() -> SimDataset {
        let mut d = SimDataset::new();
        for i in 0..12 {
            let x = (i as f64 + 0.5) / 12.0;
            let t = ((i * 7) % 12) as f64 / 12.0;
            d.push(JointInput::new(&[x], &[t]), (10.0 * x - 5.0 * t).sin()).unwrap();
        }
        d
    }

    #[test]
    fn gradient_matches_central_differences() {
        let d = toy();
        let y = {
            let s = Standardization::from_outputs(d.outputs());
            d.outputs().iter().map(|v| s.apply(*v)).collect()
        };
        let mut w = LmlWorkspace::new(&d, y);
        let x = vec![0.7, 1.3, 0.2, (1e-3f64).ln()];
        let mut g = vec![0.0; 4];
        w.neg_lml(&x, Some(&mut g));
        for i in 0..4 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (w.neg_lml(&xp, None) - w.neg_lml(&xm, None)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0), "coord {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn fit_improves_on_default_start() {
        let d = toy();
        let e = fit(&d, &FitConfig::default()).unwrap();
        let start = KernelParams::new(vec![2f64.ln(); 2], 1.0, 1e-4);
        let l0 = log_marginal_likelihood(&d, &start).unwrap();
        let l1 = log_marginal_likelihood(&d, e.kernel()).unwrap();
        assert!(l1 >= l0);
    }
}
