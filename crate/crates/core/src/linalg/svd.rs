//! Thin singular value decomposition and the Moore–Penrose pseudo-inverse.
//!
//! Tall inputs are first reduced with a Householder QR, then the square
//! triangular factor is diagonalized by one-sided (Hestenes) Jacobi
//! rotations. Wide inputs are handled through their transpose.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// `a = u * diag(singular_values) * v^T`, with `k = min(rows, cols)` and
/// singular values sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    /// rows x k
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    /// cols x k
    pub v: Matrix,
}

impl Svd {
    pub fn new(a: &Matrix) -> Result<Svd> {
        if !a.is_finite() {
            return Err(Error::NonFinite("svd input"));
        }
        if a.rows() >= a.cols() {
            tall_svd(a)
        } else {
            let t = tall_svd(&a.transpose())?;
            Ok(Svd {
                u: t.v,
                singular_values: t.singular_values,
                v: t.u,
            })
        }
    }

    /// Rank cutoff `max(rows, cols) * eps * sigma_max`.
    pub fn tolerance(&self) -> f64 {
        let dim = self.u.rows().max(self.v.rows()) as f64;
        dim * f64::EPSILON * self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn rank(&self) -> usize {
        let tol = self.tolerance();
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }

    /// `sigma_max / sigma_min`; infinite for rank-deficient input.
    pub fn condition_number(&self) -> f64 {
        match (self.singular_values.first(), self.singular_values.last()) {
            (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
            (Some(_), Some(_)) => f64::INFINITY,
            _ => 1.0,
        }
    }

    pub fn pseudo_inverse(&self) -> Matrix {
        let tol = self.tolerance();
        let (m, n, k) = (self.u.rows(), self.v.rows(), self.singular_values.len());
        let mut out = Matrix::zeros(n, m);
        for (idx, &s) in self.singular_values.iter().enumerate() {
            if s <= tol || s == 0.0 {
                continue;
            }
            let inv = 1.0 / s;
            for i in 0..n {
                let vi = self.v.get(i, idx) * inv;
                if vi == 0.0 {
                    continue;
                }
                let row = &mut out.as_mut_slice()[i * m..(i + 1) * m];
                for (j, o) in row.iter_mut().enumerate() {
                    *o += vi * self.u.get(j, idx);
                }
            }
        }
        debug_assert_eq!(k, self.u.cols());
        out
    }
}

/// Moore–Penrose pseudo-inverse via SVD.
pub fn pinv(a: &Matrix) -> Result<Matrix> {
    Ok(Svd::new(a)?.pseudo_inverse())
}

/// SVD for `rows >= cols`.
fn tall_svd(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    if n == 0 {
        return Ok(Svd {
            u: Matrix::zeros(m, 0),
            singular_values: Vec::new(),
            v: Matrix::zeros(0, 0),
        });
    }
    let (q, r) = householder_qr(a);
    let jac = jacobi_svd(&r)?;
    let u = q.matmul(&jac.u)?;
    Ok(Svd {
        u,
        singular_values: jac.singular_values,
        v: jac.v,
    })
}

/// Thin Householder QR of a tall matrix: `q` is rows x cols with orthonormal
/// columns and `r` is cols x cols upper triangular.
fn householder_qr(a: &Matrix) -> (Matrix, Matrix) {
    let (m, n) = a.shape();
    // Column-major working copy.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);

    for k in 0..n {
        let x = &cols[k][k..];
        let scale = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let mut v: Vec<f64> = x.to_vec();
        if scale > 0.0 {
            let norm = scale * x.iter().map(|t| (t / scale) * (t / scale)).sum::<f64>().sqrt();
            let alpha = if v[0] >= 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vnorm = dot(&v, &v).sqrt();
            if vnorm > 0.0 {
                v.iter_mut().for_each(|t| *t /= vnorm);
                for col in cols.iter_mut().skip(k) {
                    let seg = &mut col[k..];
                    let proj = 2.0 * dot(&v, seg);
                    for (s, &vi) in seg.iter_mut().zip(&v) {
                        *s -= proj * vi;
                    }
                }
            } else {
                v.iter_mut().for_each(|t| *t = 0.0);
            }
        } else {
            v.iter_mut().for_each(|t| *t = 0.0);
        }
        reflectors.push(v);
    }

    let mut r = Matrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..=j {
            r.set(i, j, col[i]);
        }
    }

    // Accumulate Q = H_0 H_1 ... H_{n-1} applied to the first n unit vectors.
    let mut q_cols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for k in (0..n).rev() {
        let v = &reflectors[k];
        for col in q_cols.iter_mut() {
            let seg = &mut col[k..];
            let proj = 2.0 * dot(v, seg);
            if proj != 0.0 {
                for (s, &vi) in seg.iter_mut().zip(v) {
                    *s -= proj * vi;
                }
            }
        }
    }
    let mut q = Matrix::zeros(m, n);
    for (j, col) in q_cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            q.set(i, j, v);
        }
    }
    (q, r)
}

/// One-sided Jacobi SVD of a square matrix.
fn jacobi_svd(a: &Matrix) -> Result<Svd> {
    let n = a.cols();
    let m = a.rows();
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut norms: Vec<f64> = w.iter().map(|c| dot(c, c)).collect();
    let tol = f64::EPSILON * (m as f64);

    let mut converged = false;
    let mut last_off = 0.0f64;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        last_off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&w[p], &w[q]);
                let ratio = gamma.abs() / (alpha * beta).sqrt();
                last_off = last_off.max(ratio);
                if ratio <= tol {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = w.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = v.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                norms[p] = dot(&w[p], &w[p]);
                norms[q] = dot(&w[q], &w[q]);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNonConvergence {
            sweeps,
            off_diagonal: last_off,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sigmas: Vec<f64> = norms.iter().map(|s| s.sqrt()).collect();
    order.sort_by(|&i, &j| sigmas[j].total_cmp(&sigmas[i]).then(i.cmp(&j)));

    let mut u = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let s = sigmas[j];
        singular_values.push(s);
        for i in 0..m {
            u.set(i, k, if s > 0.0 { w[j][i] / s } else { 0.0 });
        }
        for i in 0..n {
            vm.set(i, k, v[j][i]);
        }
    }
    Ok(Svd {
        u,
        singular_values,
        v: vm,
    })
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let xa = *a;
        let yb = *b;
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}
