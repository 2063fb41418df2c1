//! Symmetric eigendecomposition and PSD log-determinants.
//!
//! The solver is a cyclic Jacobi sweep: rotations that annihilate one
//! off-diagonal element at a time, accumulated into the eigenvector matrix.
//! It is capped at 100 sweeps and declares convergence when the off-diagonal
//! Frobenius norm falls below `1e-12 * max(1, ||S||_F)`.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const MAX_SWEEPS: usize = 100;
const OFF_DIAG_TOL: f64 = 1e-12;

/// Eigenvalues sorted ascending, paired with orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl EigenPair {
    /// Max deviation of `U^T U` from the identity.
    pub fn orthonormality_residual(&self) -> f64 {
        let n = self.vectors.cols();
        let utu = self.vectors.matmul_tn(&self.vectors).expect("square");
        let mut max = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                max = max.max((utu.get(i, j) - want).abs());
            }
        }
        max
    }

    /// Max deviation of `U diag(lambda) U^T` from `s`.
    pub fn reconstruction_residual(&self, s: &Matrix) -> f64 {
        let scaled = self.vectors.scale_cols(&self.values).expect("shape");
        let recon = scaled.matmul_nt(&self.vectors).expect("shape");
        recon.max_abs_diff(s).expect("shape")
    }
}

fn off_diag_frobenius(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = a.get(i, j);
            sum += 2.0 * v * v;
        }
    }
    sum.sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Inputs with asymmetry up to `1e-9` (max elementwise) are symmetrized as
/// `(S + S^T)/2`; anything worse is rejected.
pub fn sym_eig(s: &Matrix) -> Result<EigenPair> {
    let n = s.rows();
    if n != s.cols() {
        return Err(Error::shape(format!(
            "sym_eig: matrix is {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    s.check_finite("sym_eig input")?;
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((s.get(i, j) - s.get(j, i)).abs());
        }
    }
    if asym > 1e-9 {
        return Err(Error::invalid_input(format!(
            "sym_eig: asymmetry {asym:.3e} exceeds 1e-9"
        )));
    }

    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a.set(i, j, 0.5 * (s.get(i, j) + s.get(j, i)));
        }
    }
    let mut v = Matrix::identity(n);

    if n == 1 {
        return Ok(EigenPair {
            values: vec![a.get(0, 0)],
            vectors: v,
        });
    }

    let tol = OFF_DIAG_TOL * a.frobenius_norm().max(1.0);
    let mut residual = off_diag_frobenius(&a);
    let mut sweeps = 0;
    while residual > tol {
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NoConvergence { residual, sweeps });
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;

                for i in 0..n {
                    if i != p && i != q {
                        let aip = a.get(i, p);
                        let aiq = a.get(i, q);
                        let new_p = c * aip - sn * aiq;
                        let new_q = sn * aip + c * aiq;
                        a.set(i, p, new_p);
                        a.set(p, i, new_p);
                        a.set(i, q, new_q);
                        a.set(q, i, new_q);
                    }
                }
                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);

                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - sn * viq);
                    v.set(i, q, sn * vip + c * viq);
                }
            }
        }
        sweeps += 1;
        residual = off_diag_frobenius(&a);
    }

    // Sort ascending, carrying eigenvector columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)));
    let values: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, dst, v.get(i, src));
        }
    }
    Ok(EigenPair { values, vectors })
}

/// `log det` of a symmetric PSD matrix via its eigenvalues.
///
/// Eigenvalues below `-1e-10` are rejected; surviving values are clamped at
/// `1e-300` before the log so exact zeros stay finite.
pub fn log_det_psd(s: &Matrix) -> Result<f64> {
    let eig = sym_eig(s)?;
    if let Some(&min) = eig.values.first() {
        if min < -1e-10 {
            return Err(Error::NotPsd(min));
        }
    }
    Ok(eig.values.iter().map(|&l| l.max(1e-300).ln()).sum())
}

/// Inverse of a symmetric positive-definite matrix via eigendecomposition.
pub fn psd_inverse(s: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(s)?;
    let max = eig.values.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let floor = 1e-12 * max.max(1.0);
    let inv: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| {
            if l <= floor {
                Err(Error::NotPsd(l))
            } else {
                Ok(1.0 / l)
            }
        })
        .collect::<Result<_>>()?;
    let scaled = eig.vectors.scale_cols(&inv)?;
    scaled.matmul_nt(&eig.vectors)
}
