//! The variational objective driving the unrolled block: a trace data term
//! against a log-det regulariser, its stop-grad gradients, and the
//! closed-form optimal embeddings obtained from Laplacian eigenvectors.
//!
//! Throughout, the Laplacian passed in is treated as a constant
//! ("stop-grad"): gradients never differentiate through the adjacency that
//! produced it.

use crate::eigen::{psd_inverse, sym_eig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Threshold below which a Laplacian eigenvalue counts as zero (the constant
/// mode of a connected component).
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-9;

/// Hyperparameters of the objective. `d` (the data dimension / degrees of
/// freedom) is carried for bookkeeping only.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveParams {
    pub beta: f64,
    pub kappa: f64,
    pub q: usize,
    pub d: usize,
}

impl ObjectiveParams {
    pub fn new(beta: f64, kappa: f64, q: usize, d: usize) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::invalid_parameter(format!("beta must be positive, got {beta}")));
        }
        if !(kappa > 0.0) {
            return Err(Error::invalid_parameter(format!("kappa must be positive, got {kappa}")));
        }
        if q == 0 {
            return Err(Error::invalid_parameter("q must be at least 1"));
        }
        Ok(ObjectiveParams { beta, kappa, q, d })
    }
}

/// A latent matrix together with whether its rows are known to be projected
/// (zero mean, unit norm).
#[derive(Debug, Clone)]
pub struct EmbeddingState {
    pub x: Matrix,
    pub projected: bool,
}

impl EmbeddingState {
    pub fn raw(x: Matrix) -> Self {
        EmbeddingState { x, projected: false }
    }

    /// Projects every row and marks the state accordingly.
    pub fn projected(x: &Matrix) -> Result<Self> {
        Ok(EmbeddingState {
            x: crate::block::project_rows(x)?,
            projected: true,
        })
    }

    /// Max violation of the projected invariant (row means and norms).
    pub fn projection_residual(&self) -> f64 {
        let mut r = 0.0f64;
        for i in 0..self.x.rows() {
            let row = self.x.row(i);
            let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            r = r.max(mean.abs()).max((norm - 1.0).abs());
        }
        r
    }
}

/// `tr(L (X X^T + beta I)) = tr(L X X^T) + beta tr(L)`, computed as
/// `sum_ik X_ik (L X)_ik` so the n-by-n Gram matrix is never formed.
pub fn data_term(x: &Matrix, ltilde: &Matrix, beta: f64) -> Result<f64> {
    let n = x.rows();
    if ltilde.rows() != n || ltilde.cols() != n {
        return Err(Error::shape(format!(
            "data_term: laplacian is {}x{}, latents have {n} rows",
            ltilde.rows(),
            ltilde.cols()
        )));
    }
    let lx = ltilde.matmul(x)?;
    let tr_lxx: f64 = x
        .as_slice()
        .iter()
        .zip(lx.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    Ok(tr_lxx + beta * ltilde.trace())
}

/// `log det(X X^T + beta I)` via the push-through identity
/// `log det(X^T X + beta I) + (n - q) log beta`, a q-by-q problem.
pub fn reg_term(x: &Matrix, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::invalid_parameter(format!("reg_term: beta must be positive, got {beta}")));
    }
    let (n, q) = (x.rows(), x.cols());
    let mut gram = x.matmul_tn(x)?;
    for i in 0..q {
        let v = gram.get(i, i) + beta;
        gram.set(i, i, v);
    }
    Ok(crate::eigen::log_det_psd(&gram)? + (n as f64 - q as f64) * beta.ln())
}

/// The objective: data term minus regulariser (additive constant dropped).
pub fn kl_objective(x: &Matrix, ltilde: &Matrix, params: &ObjectiveParams) -> Result<f64> {
    Ok(data_term(x, ltilde, params.beta)? - reg_term(x, params.beta)?)
}

/// Stop-grad gradient of the data term: `2 L X`, with the Laplacian frozen.
pub fn grad_data(x: &Matrix, ltilde: &Matrix) -> Result<Matrix> {
    if ltilde.cols() != x.rows() {
        return Err(Error::shape(format!(
            "grad_data: laplacian is {}x{}, latents have {} rows",
            ltilde.rows(),
            ltilde.cols(),
            x.rows()
        )));
    }
    Ok(ltilde.matmul(x)?.scaled(2.0))
}

/// Exact regulariser gradient `2 X (X^T X + beta I)^{-1}` (push-through
/// form; only a q-by-q inverse).
pub fn grad_reg_exact(x: &Matrix, beta: f64) -> Result<Matrix> {
    if !(beta > 0.0) {
        return Err(Error::invalid_parameter(format!(
            "grad_reg_exact: beta must be positive, got {beta}"
        )));
    }
    let q = x.cols();
    let mut gram = x.matmul_tn(x)?;
    for i in 0..q {
        let v = gram.get(i, i) + beta;
        gram.set(i, i, v);
    }
    let inv = psd_inverse(&gram)?;
    Ok(x.matmul(&inv)?.scaled(2.0))
}

/// The linearized regulariser gradient `2/(q + beta) * X`.
pub fn grad_reg_approx(x: &Matrix, beta: f64, q: usize) -> Matrix {
    x.scaled(2.0 / (q as f64 + beta))
}

/// Alternative scale `2q/(n + beta q)`, which the exact gradient approaches
/// when rows are zero-mean unit-norm and spread isotropically. Exposed for
/// comparison reporting only; the update path uses [`grad_reg_approx`].
pub fn reg_factor_spread(n: usize, q: usize, beta: f64) -> f64 {
    2.0 * q as f64 / (n as f64 + beta * q as f64)
}

fn selected_spectrum(l: &Matrix, q: usize) -> Result<(Vec<f64>, Matrix)> {
    let n = l.rows();
    if q >= n {
        return Err(Error::invalid_parameter(format!(
            "embedding dimension q={q} must be below n={n}"
        )));
    }
    let eig = sym_eig(l)?;
    if eig.values[0] < -ZERO_EIGENVALUE_TOL {
        return Err(Error::NotPsd(eig.values[0]));
    }
    let first_nonzero = eig
        .values
        .iter()
        .position(|&v| v > ZERO_EIGENVALUE_TOL)
        .unwrap_or(eig.values.len());
    let available = eig.values.len() - first_nonzero;
    if available < q {
        return Err(Error::InsufficientRank { needed: q, available });
    }
    let values: Vec<f64> = eig.values[first_nonzero..first_nonzero + q].to_vec();
    let mut vectors = Matrix::zeros(n, q);
    for (dst, src) in (first_nonzero..first_nonzero + q).enumerate() {
        for i in 0..n {
            vectors.set(i, dst, eig.vectors.get(i, src));
        }
    }
    Ok((values, vectors))
}

/// Closed-form optimum of the objective: eigenvectors of the Laplacian for
/// the q smallest non-zero eigenvalues, scaled by `sqrt(max(1/lambda - beta,
/// 0))` per column. The free rotation is fixed at the identity.
pub fn closed_form_embedding(l: &Matrix, q: usize, beta: f64) -> Result<Matrix> {
    let (values, vectors) = selected_spectrum(l, q)?;
    let scales: Vec<f64> = values
        .iter()
        .map(|&lambda| (1.0 / lambda - beta).max(0.0).sqrt())
        .collect();
    vectors.scale_cols(&scales)
}

/// Optimum under the additional orthonormality constraint `X^T X = I`: the
/// selected eigenvectors themselves (rotation fixed at the identity).
pub fn constrained_embedding(l: &Matrix, q: usize) -> Result<Matrix> {
    Ok(selected_spectrum(l, q)?.1)
}
