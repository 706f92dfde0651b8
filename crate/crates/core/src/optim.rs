//! Local optimizers: a box-constrained quasi-Newton method (projected BFGS)
//! for smooth objectives with analytic gradients, and Nelder–Mead for the
//! derivative-free parameter search.

#[derive(Clone, Debug)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        debug_assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        Self { lower, upper }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuasiNewtonOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub grad_tol: f64,
    /// Stop when a step decreases the objective by less than `f_tol * max(1, |f|)`.
    pub f_tol: f64,
}

impl Default for QuasiNewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-6,
            f_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` over a box with a projected BFGS iteration.
///
/// `f(x, grad)` returns the objective and writes the gradient. A non-finite
/// value marks `x` as infeasible; the line search backs off from it.
pub fn minimize_box<F>(mut f: F, x0: &[f64], bounds: &Bounds, opts: &QuasiNewtonOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(n, bounds.dim());
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    if !fx.is_finite() {
        return Minimum { x, f: f64::INFINITY, iterations: 0, evaluations, converged: false };
    }

    let mut h = identity(n);
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let pg = projected_gradient_norm(&x, &g, bounds);
        if pg < opts.grad_tol {
            converged = true;
            break;
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= bounds.lower[i] && g[i] > 0.0) || (x[i] >= bounds.upper[i] && g[i] < 0.0)))
            .collect();
        compute_direction(&h, &g, &free, &mut dir);
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            h = identity(n);
            compute_direction(&h, &g, &free, &mut dir);
            slope = dot(&g, &dir);
            if slope >= 0.0 {
                converged = true;
                break;
            }
        }

        let mut alpha = if iter == 0 {
            let gmax = dir.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if gmax > 1.0 { 1.0 / gmax } else { 1.0 }
        } else {
            1.0
        };
        let mut accepted = false;
        let mut fn_ = f64::INFINITY;
        for _ in 0..40 {
            for i in 0..n {
                xn[i] = x[i] + alpha * dir[i];
            }
            bounds.project(&mut xn);
            fn_ = f(&xn, &mut gn);
            evaluations += 1;
            let decrease: f64 = (0..n).map(|i| g[i] * (xn[i] - x[i])).sum();
            if fn_.is_finite() && fn_ <= fx + 1e-4 * decrease {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }

        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if iter == 0 {
                let yy = dot(&y, &y);
                let scale = sy / yy;
                for i in 0..n {
                    for j in 0..n {
                        h[i][j] = if i == j { scale } else { 0.0 };
                    }
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        let df = fx - fn_;
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        fx = fn_;
        if df <= opts.f_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Minimum { x, f: fx, iterations, evaluations, converged }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], b: &Bounds) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (xi, gi))| ((xi - gi).clamp(b.lower[i], b.upper[i]) - xi).abs())
        .fold(0.0, f64::max)
}

fn compute_direction(h: &[Vec<f64>], g: &[f64], free: &[bool], dir: &mut [f64]) {
    let n = g.len();
    for i in 0..n {
        dir[i] = if free[i] {
            -(0..n).filter(|&j| free[j]).map(|j| h[i][j] * g[j]).sum::<f64>()
        } else {
            0.0
        };
    }
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Nelder–Mead simplex search, projected onto `bounds`. `step` sets the
/// initial simplex edge per coordinate. The returned point is the best one
/// evaluated, so its value never exceeds `f(x0)`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: f64, bounds: &Bounds, max_evals: usize) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut start = x0.to_vec();
    bounds.project(&mut start);
    let mut evals = 0usize;
    let mut eval = |p: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(p);
        if v.is_nan() { f64::INFINITY } else { v }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(&start, &mut evals);
    simplex.push((start.clone(), f0));
    for i in 0..n {
        let mut p = start.clone();
        let width = bounds.upper[i] - bounds.lower[i];
        let h = step * if width.is_finite() && width > 0.0 { width } else { 1.0 };
        p[i] = if p[i] + h <= bounds.upper[i] { p[i] + h } else { p[i] - h };
        bounds.project(&mut p);
        let fp = eval(&p, &mut evals);
        simplex.push((p, fp));
    }

    let mut iterations = 0;
    let mut converged = false;
    while evals < max_evals {
        iterations += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex
            .iter()
            .skip(1)
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.abs() <= 1e-12 * simplex[0].1.abs().max(1e-300) && size < 1e-10 || size < 1e-12 {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..n).map(|j| centroid[j] + t * (worst.0[j] - centroid[j])).collect();
            bounds.project(&mut p);
            p
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let p = along(-0.5);
                let v = eval(&p, &mut evals);
                (p, v)
            } else {
                let p = along(0.5);
                let v = eval(&p, &mut evals);
                (p, v)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let mut p: Vec<f64> = (0..n).map(|j| best[j] + 0.5 * (item.0[j] - best[j])).collect();
                    bounds.project(&mut p);
                    let v = eval(&p, &mut evals);
                    *item = (p, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Minimum { x, f: fx, iterations, evaluations: evals, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn bfgs_finds_rosenbrock_minimum() {
        let b = Bounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let m = minimize_box(rosenbrock, &[-1.2, 1.0], &b, &QuasiNewtonOptions { max_iter: 500, ..Default::default() });
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m);
    }

    #[test]
    fn bfgs_stops_on_active_bound() {
        // minimum of (x - 3)² over [0, 1] is at the upper bound
        let b = Bounds::new(vec![0.0, -1.0], vec![1.0, 1.0]);
        let m = minimize_box(
            |x, g| {
                g[0] = 2.0 * (x[0] - 3.0);
                g[1] = 2.0 * x[1];
                (x[0] - 3.0).powi(2) + x[1] * x[1]
            },
            &[0.2, 0.7],
            &b,
            &QuasiNewtonOptions::default(),
        );
        assert_eq!(m.x[0], 1.0);
        assert!(m.x[1].abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_quadratic_and_monotone() {
        let b = Bounds::unit(2);
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] - 0.8).powi(2);
        let start = [0.9, 0.1];
        let m = nelder_mead(f, &start, 0.1, &b, 400);
        assert!((m.x[0] - 0.3).abs() < 1e-4 && (m.x[1] - 0.8).abs() < 1e-4);
        assert!(m.f <= f(&start));
    }
}
