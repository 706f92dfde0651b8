//! Small dense linear-algebra helpers on top of `nalgebra` storage.
//!
//! The covariance matrices handled here are small (the field dimension, up to a
//! few dozen) or moderate (the GP training set, up to a few hundred), so a
//! plain row-major Cholesky with an explicit pivot threshold is enough and
//! lets callers decide what "numerically singular" means.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`, stored row-major.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factorizes a symmetric matrix (only the lower triangle is read).
    ///
    /// Fails when a squared pivot drops to `rel_tol * max(diag(A))` or below,
    /// or when the matrix holds non-finite entries.
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Option<Self> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut buf = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                buf[i * n + j] = a[(i, j)];
            }
        }
        Self::from_row_major(buf, n, rel_tol)
    }

    /// Factorizes in place; `a` is an `n×n` row-major buffer whose lower
    /// triangle holds the matrix.
    pub fn from_row_major(mut a: Vec<f64>, n: usize, rel_tol: f64) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0_f64, f64::max);
        let floor = rel_tol * max_diag;
        for j in 0..n {
            let row_j = &mut a[j * n..(j + 1) * n];
            let d = row_j[j] - dot(&row_j[..j], &row_j[..j]);
            if !d.is_finite() || d <= floor || d <= 0.0 {
                return None;
            }
            let djj = d.sqrt();
            row_j[j] = djj;
            for v in row_j[j + 1..].iter_mut() {
                *v = 0.0;
            }
            let (upto, rest) = a.split_at_mut((j + 1) * n);
            let row_j = &upto[j * n..j * n + j];
            for i in (j + 1)..n {
                let row_i = &mut rest[(i - j - 1) * n..(i - j) * n];
                let s = row_i[j] - dot(&row_i[..j], row_j);
                row_i[j] = s / djj;
            }
        }
        Some(Self { n, l: a })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.l[i * self.n..i * self.n + i + 1]
    }

    pub fn factor(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if j <= i { self.l[i * self.n + j] } else { 0.0 })
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>()
    }

    /// Forward substitution: returns `L⁻¹ b`.
    pub fn solve_lower(&self, b: &[f64]) -> DVector<f64> {
        let mut out = DVector::from_column_slice(b);
        self.solve_lower_in_place(out.as_mut_slice());
        out
    }

    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Back substitution: solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let row = self.row(i);
            b[i] /= row[i];
            let xi = b[i];
            for (bk, lk) in b[..i].iter_mut().zip(&row[..i]) {
                *bk -= lk * xi;
            }
        }
    }

    /// Returns `A⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> DVector<f64> {
        let mut x = self.solve_lower(b);
        self.solve_upper_in_place(x.as_mut_slice());
        x
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        self.solve_lower(b).norm_squared()
    }

    /// Row-major `L⁻¹` (lower triangular).
    fn lower_inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        let mut acc = vec![0.0; n];
        for i in 0..n {
            let row = self.row(i);
            acc[..=i].iter_mut().for_each(|v| *v = 0.0);
            for k in 0..i {
                let lik = row[k];
                if lik != 0.0 {
                    let rk = &inv[k * n..k * n + k + 1];
                    for (a, r) in acc[..=k].iter_mut().zip(rk) {
                        *a -= lik * r;
                    }
                }
            }
            acc[i] += 1.0;
            let d = row[i];
            for (dst, a) in inv[i * n..i * n + i + 1].iter_mut().zip(&acc[..=i]) {
                *dst = a / d;
            }
        }
        inv
    }

    /// Full inverse `A⁻¹` as a row-major buffer.
    pub fn inverse_row_major(&self) -> Vec<f64> {
        let n = self.n;
        let linv = self.lower_inverse();
        let mut out = vec![0.0; n * n];
        // A⁻¹ = L⁻ᵀ L⁻¹ = Σ_k r_k r_kᵀ over rows r_k of L⁻¹; fill the lower triangle.
        for k in 0..n {
            let rk = &linv[k * n..k * n + k + 1];
            for i in 0..=k {
                let ri = rk[i];
                if ri != 0.0 {
                    let dst = &mut out[i * n..i * n + i + 1];
                    for (d, r) in dst.iter_mut().zip(&rk[..=i]) {
                        *d += ri * r;
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                out[j * n + i] = out[i * n + j];
            }
        }
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.n;
        let buf = self.inverse_row_major();
        DMatrix::from_fn(n, n, |i, j| buf[i * n + j])
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..a.len() {
        s0 += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

/// Log density of `N(residual; 0, A)` given the factor of `A`.
pub fn log_mvn_density(residual: &[f64], chol: &Cholesky) -> f64 {
    let d = residual.len() as f64;
    -0.5 * (d * LN_2PI + chol.log_det() + chol.quad_form(residual))
}

/// Projects a symmetric matrix onto the PSD cone by flooring eigenvalues at 0.
/// Returns the smallest eigenvalue before clipping.
pub fn clip_psd(s: &mut DMatrix<f64>) -> f64 {
    let n = s.nrows();
    if n == 0 {
        return 0.0;
    }
    symmetrize(s);
    let eig = SymmetricEigen::new(s.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= 0.0 {
        return min;
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    *s = v * DMatrix::from_diagonal(&vals) * v.transpose();
    symmetrize(s);
    min
}

pub fn symmetrize(s: &mut DMatrix<f64>) {
    let n = s.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let m = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = m;
            s[(j, i)] = m;
        }
    }
}
