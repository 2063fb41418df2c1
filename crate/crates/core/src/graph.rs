//! Soft (differentiable) adjacencies, hard kNN reference graphs, and the
//! masks subtracted from attention logits.
//!
//! The soft adjacency is `A = softmax_rows(kappa * Z Z^T - M)` and its
//! Laplacian is `L = I - A`. The hard reference graph is a symmetrized kNN
//! graph with Laplacian `L = D - A`.

use crate::error::{Error, Result};
use crate::matrix::{row_softmax, Matrix};

/// Finite stand-in for an infinite mask entry: `exp(-1e9)` underflows to
/// exactly zero in f64, so masked entries get probability 0 bit-exactly.
pub const DEFAULT_IOTA: f64 = 1e9;

/// All-zeros mask: nothing subtracted from the logits.
pub fn mask_none(n: usize) -> Matrix {
    Matrix::zeros(n, n)
}

/// `iota * I`: removes self-edges from the soft adjacency.
pub fn mask_self_exclusion(n: usize, iota: f64) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m.set(i, i, iota);
    }
    m
}

/// Upper-triangular mask (`iota` wherever j > i): row i may only attend to
/// positions at or before i.
pub fn mask_causal(n: usize, iota: f64) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            m.set(i, j, iota);
        }
    }
    m
}

/// Adds a constant `beta` diagonal offset to an existing mask, so the logits
/// become `kappa * Z Z^T - beta * I - M` through the one masking code path.
pub fn mask_with_beta(mask: &Matrix, beta: f64) -> Result<Matrix> {
    if mask.rows() != mask.cols() {
        return Err(Error::shape("mask_with_beta: mask must be square"));
    }
    let mut out = mask.clone();
    for i in 0..out.rows() {
        let v = out.get(i, i) + beta;
        out.set(i, i, v);
    }
    Ok(out)
}

/// Row-stochastic soft adjacency `softmax_rows(kappa * Z Z^T - mask)`.
pub fn soft_adjacency(z: &Matrix, kappa: f64, mask: &Matrix) -> Result<Matrix> {
    if !(kappa > 0.0) {
        return Err(Error::invalid_parameter(format!(
            "soft_adjacency: kappa must be positive, got {kappa}"
        )));
    }
    let n = z.rows();
    if mask.rows() != n || mask.cols() != n {
        return Err(Error::shape(format!(
            "soft_adjacency: mask is {}x{}, latents have {n} rows",
            mask.rows(),
            mask.cols()
        )));
    }
    let mut logits = z.matmul_nt(z)?.scaled(kappa);
    for i in 0..n {
        for j in 0..n {
            let v = logits.get(i, j) - mask.get(i, j);
            logits.set(i, j, v);
        }
    }
    row_softmax(&logits)
}

/// `I - adjacency` for a row-stochastic adjacency; rows sum to zero.
pub fn soft_laplacian(adjacency: &Matrix) -> Result<Matrix> {
    let n = adjacency.rows();
    if adjacency.cols() != n {
        return Err(Error::shape("soft_laplacian: adjacency must be square"));
    }
    for (i, sum) in adjacency.row_sums().into_iter().enumerate() {
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_input(format!(
                "soft_laplacian: row {i} sums to {sum}, not row-stochastic"
            )));
        }
    }
    let mut out = adjacency.scaled(-1.0);
    for i in 0..n {
        let v = out.get(i, i) + 1.0;
        out.set(i, i, v);
    }
    Ok(out)
}

/// Soft graph state: adjacency, its Laplacian, and the logit parameters that
/// produced them.
#[derive(Debug, Clone)]
pub struct GraphSpec {
    pub adjacency: Matrix,
    pub laplacian: Matrix,
    pub kappa: f64,
    pub mask: Matrix,
}

impl GraphSpec {
    pub fn from_latents(z: &Matrix, kappa: f64, mask: &Matrix) -> Result<Self> {
        let adjacency = soft_adjacency(z, kappa, mask)?;
        let laplacian = soft_laplacian(&adjacency)?;
        Ok(GraphSpec {
            adjacency,
            laplacian,
            kappa,
            mask: mask.clone(),
        })
    }

    /// Max residual over the type's invariants: row-stochastic adjacency,
    /// `L = I - A` exact, Laplacian rows summing to zero.
    pub fn invariant_residual(&self) -> f64 {
        let mut r = 0.0f64;
        for sum in self.adjacency.row_sums() {
            r = r.max((sum - 1.0).abs());
        }
        for i in 0..self.adjacency.rows() {
            for j in 0..self.adjacency.cols() {
                let want = if i == j { 1.0 - self.adjacency.get(i, j) } else { -self.adjacency.get(i, j) };
                r = r.max((self.laplacian.get(i, j) - want).abs());
            }
        }
        for sum in self.laplacian.row_sums() {
            r = r.max(sum.abs());
        }
        r
    }
}

/// Hard kNN graph: 0/1 symmetric adjacency, diagonal degree matrix, and the
/// combinatorial Laplacian `D - A`.
#[derive(Debug, Clone)]
pub struct KnnGraph {
    pub adjacency: Matrix,
    pub degree: Matrix,
    pub laplacian: Matrix,
    pub k: usize,
}

/// Builds the symmetrized k-nearest-neighbour graph of the rows of `y`.
///
/// Neighbours are ranked by Euclidean distance with ties broken by lower
/// index; the directed graph is symmetrized as `A <- max(A, A^T)`. Duplicate
/// points are fine (distance zero is a valid neighbour).
pub fn knn_graph(y: &Matrix, k: usize) -> Result<KnnGraph> {
    let n = y.rows();
    if k == 0 || k >= n {
        return Err(Error::invalid_parameter(format!(
            "knn_graph: k must satisfy 1 <= k < n, got k={k}, n={n}"
        )));
    }
    y.check_finite("knn_graph input")?;

    let mut adjacency = Matrix::zeros(n, n);
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        ranked.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            let d2: f64 = y
                .row(i)
                .iter()
                .zip(y.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            ranked.push((d2, j));
        }
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in ranked.iter().take(k) {
            adjacency.set(i, j, 1.0);
        }
    }
    // Symmetrize: max(A, A^T).
    for i in 0..n {
        for j in (i + 1)..n {
            let v = adjacency.get(i, j).max(adjacency.get(j, i));
            adjacency.set(i, j, v);
            adjacency.set(j, i, v);
        }
    }

    let mut degree = Matrix::zeros(n, n);
    let mut laplacian = adjacency.scaled(-1.0);
    for i in 0..n {
        let d: f64 = adjacency.row(i).iter().sum();
        degree.set(i, i, d);
        laplacian.set(i, i, d);
    }
    Ok(KnnGraph {
        adjacency,
        degree,
        laplacian,
        k,
    })
}

/// How much of the soft adjacency's row mass sits on reference edges.
///
/// The reference adjacency is read as a 0/1 indicator; the score is the mean
/// over rows of the soft mass landing on reference edges. A soft adjacency
/// supported entirely on reference edges scores 1; isolated reference rows
/// contribute 0.
pub fn adjacency_match_score(soft: &Matrix, reference: &KnnGraph) -> Result<f64> {
    let n = soft.rows();
    if soft.cols() != n || reference.adjacency.rows() != n {
        return Err(Error::shape(format!(
            "adjacency_match_score: soft is {}x{}, reference is {}x{}",
            soft.rows(),
            soft.cols(),
            reference.adjacency.rows(),
            reference.adjacency.cols()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if reference.adjacency.get(i, j) > 0.0 {
                total += soft.get(i, j);
            }
        }
    }
    Ok(total / n as f64)
}
