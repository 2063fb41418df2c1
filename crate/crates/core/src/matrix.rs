//! Dense row-major matrices and the kernels built on them.
//!
//! [`Matrix`] is the universal carrier for data, latents, adjacencies,
//! Laplacians, and weights. Storage is `data[i * cols + j]`, always `f64`.
//! Products are delegated to `matrixmultiply::dgemm`, which runs a fixed
//! cache-blocked schedule on a single thread, so results are bit-identical
//! from run to run on the same build.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data; fails if the length is wrong.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Diagonal matrix from a vector.
    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("from_rows: no rows"));
        }
        let cols = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "from_rows: row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Errors unless every entry is finite; `what` names the operand.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid_input(format!("{what}: non-finite entries")))
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    /// `max |a - b|` over entries; shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix::new(self.rows, self.cols, data)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        self.same_shape(other, "add_scaled")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        dgemm_into(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            self.cols as isize,
            1,
            &other.data,
            other.cols as isize,
            1,
            &mut out.data,
        );
        Ok(out)
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(format!(
                "matmul_tn: {}x{}^T * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        dgemm_into(
            self.cols,
            self.rows,
            other.cols,
            &self.data,
            1,
            self.cols as isize,
            &other.data,
            other.cols as isize,
            1,
            &mut out.data,
        );
        Ok(out)
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "matmul_nt: {}x{} * {}x{}^T",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        dgemm_into(
            self.rows,
            self.cols,
            other.rows,
            &self.data,
            self.cols as isize,
            1,
            &other.data,
            1,
            other.cols as isize,
            &mut out.data,
        );
        Ok(out)
    }

    /// Row sums as a vector.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Scales every row by the matching factor.
    pub fn scale_rows(&self, factors: &[f64]) -> Result<Matrix> {
        if factors.len() != self.rows {
            return Err(Error::shape("scale_rows: factor length != rows"));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            let f = factors[i];
            for v in out.row_mut(i) {
                *v *= f;
            }
        }
        Ok(out)
    }

    /// Scales every column by the matching factor.
    pub fn scale_cols(&self, factors: &[f64]) -> Result<Matrix> {
        if factors.len() != self.cols {
            return Err(Error::shape("scale_cols: factor length != cols"));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] *= factors[j];
            }
        }
        Ok(out)
    }

    fn same_shape(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn dgemm_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// General strided `C = alpha A B + beta C` on submatrix views, so per-head
/// attention blocks multiply in place without being copied out first.
/// Offsets and strides must describe in-bounds views; checked in debug.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dgemm_view(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_off: usize,
    rsa: isize,
    csa: isize,
    b: &[f64],
    b_off: usize,
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    c_off: usize,
    rsc: isize,
    csc: isize,
) {
    let max_index = |off: usize, rows: usize, cols: usize, rs: isize, cs: isize| -> usize {
        let r = (rows as isize - 1).max(0) * rs;
        let cc = (cols as isize - 1).max(0) * cs;
        (off as isize + r.max(0) + cc.max(0)) as usize
    };
    debug_assert!(max_index(a_off, m, k, rsa, csa) < a.len());
    debug_assert!(max_index(b_off, k, n, rsb, csb) < b.len());
    debug_assert!(max_index(c_off, m, n, rsc, csc) < c.len());
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(a_off),
            rsa,
            csa,
            b.as_ptr().add(b_off),
            rsb,
            csb,
            beta,
            c.as_mut_ptr().add(c_off),
            rsc,
            csc,
        );
    }
}

/// Row-wise softmax, stabilized by subtracting each row's maximum before
/// exponentiation. Output rows sum to 1; entries lie in `(0, 1]`.
pub fn row_softmax(m: &Matrix) -> Result<Matrix> {
    m.check_finite("row_softmax input")?;
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.as_slice(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_checked() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
        assert!(a.matmul_nt(&b).is_ok());
        assert!(a.matmul_tn(&b).is_ok());
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = crate::rng::gaussian_matrix(5, 3, 1.0, 11).unwrap();
        let b = crate::rng::gaussian_matrix(5, 4, 1.0, 12).unwrap();
        let tn = a.matmul_tn(&b).unwrap();
        let explicit = a.transpose().matmul(&b).unwrap();
        assert!(tn.max_abs_diff(&explicit).unwrap() < 1e-12);

        let c = crate::rng::gaussian_matrix(4, 3, 1.0, 13).unwrap();
        let d = crate::rng::gaussian_matrix(6, 3, 1.0, 14).unwrap();
        let nt = c.matmul_nt(&d).unwrap();
        let explicit = c.matmul(&d.transpose()).unwrap();
        assert!(nt.max_abs_diff(&explicit).unwrap() < 1e-12);
    }

    #[test]
    fn softmax_uniform_on_constant_rows() {
        let m = Matrix::zeros(2, 2);
        let s = row_softmax(&m).unwrap();
        for &v in s.as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form() {
        // row [0, ln 3] -> [1/4, 3/4]
        let m = Matrix::new(1, 2, vec![0.0, 3.0f64.ln()]).unwrap();
        let s = row_softmax(&m).unwrap();
        assert!((s.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((s.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_matches_naive_oracle() {
        // Independent exp/sum route without max-subtraction.
        let m = crate::rng::gaussian_matrix(3, 3, 1.0, 21).unwrap();
        let s = row_softmax(&m).unwrap();
        for i in 0..3 {
            let exps: Vec<f64> = m.row(i).iter().map(|&x| x.exp()).collect();
            let total: f64 = exps.iter().sum();
            for j in 0..3 {
                assert!((s.get(i, j) - exps[j] / total).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let m = Matrix::new(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(row_softmax(&m).is_err());
        let m = Matrix::new(1, 2, vec![f64::INFINITY, 0.0]).unwrap();
        assert!(row_softmax(&m).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(seed in 0u64..500, rows in 1usize..8, cols in 1usize..8) {
            let m = crate::rng::gaussian_matrix(rows, cols, 3.0, seed).unwrap();
            let s = row_softmax(&m).unwrap();
            for sum in s.row_sums() {
                prop_assert!((sum - 1.0).abs() <= 1e-12);
            }
            for &v in s.as_slice() {
                prop_assert!(v > 0.0 && v <= 1.0);
            }
        }

        #[test]
        fn softmax_shift_invariant(seed in 0u64..200, shift in -50.0f64..50.0) {
            let m = crate::rng::gaussian_matrix(4, 5, 2.0, seed).unwrap();
            let shifted = m.map(|x| x + shift);
            let a = row_softmax(&m).unwrap();
            let b = row_softmax(&shifted).unwrap();
            prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);
        }
    }
}

