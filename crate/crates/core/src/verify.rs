//! Named runtime check suites behind the `verify` command: property and
//! equivalence checks per module, each reporting a pass flag and its worst
//! residual. All randomness is internally seeded, so a suite run is
//! deterministic.

use crate::block::{
    attention_step, block_forward, gd_reference_step, layer_norm_rows, project_rows,
    AttentionMode, BlockWeights,
};
use crate::eigen::{log_det_psd, sym_eig};
use crate::graph::{knn_graph, mask_none, soft_adjacency, soft_laplacian};
use crate::matrix::{row_softmax, Matrix};
use crate::objective::{
    constrained_embedding, data_term, grad_data, grad_reg_approx, grad_reg_exact, kl_objective,
    reg_factor_spread, reg_term, ObjectiveParams,
};
use crate::rng::{gaussian_matrix, random_orthogonal, SplitMix64};

const SUITE_SEED: u64 = 0x5eed_cafe;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_residual: f64,
    pub details: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, max_residual: f64, details: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            max_residual,
            details: details.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Linalg,
    Graph,
    Objective,
    Block,
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linalg" => Ok(Suite::Linalg),
            "graph" => Ok(Suite::Graph),
            "objective" => Ok(Suite::Objective),
            "block" => Ok(Suite::Block),
            "all" => Ok(Suite::All),
            other => Err(format!(
                "unknown suite {other:?}; expected linalg|graph|objective|block|all"
            )),
        }
    }
}

pub fn run_suite(suite: Suite) -> Vec<CheckResult> {
    match suite {
        Suite::Linalg => linalg_suite(),
        Suite::Graph => graph_suite(),
        Suite::Objective => objective_suite(),
        Suite::Block => block_suite(),
        Suite::All => {
            let mut all = linalg_suite();
            all.extend(graph_suite());
            all.extend(objective_suite());
            all.extend(block_suite());
            all
        }
    }
}

fn random_symmetric(n: usize, seed: u64) -> Matrix {
    let g = gaussian_matrix(n, n, 1.0, seed).unwrap();
    g.add(&g.transpose()).unwrap().scaled(0.5)
}

fn finite_diff(f: &dyn Fn(&Matrix) -> f64, x: &Matrix, step: f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            plus.set(i, j, x.get(i, j) + step);
            let mut minus = x.clone();
            minus.set(i, j, x.get(i, j) - step);
            g.set(i, j, (f(&plus) - f(&minus)) / (2.0 * step));
        }
    }
    g
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let denom = a.frobenius_norm().max(b.frobenius_norm()).max(1e-12);
    a.sub(b).unwrap().frobenius_norm() / denom
}

fn linalg_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = SplitMix64::new(SUITE_SEED);

    let mut worst = 0.0f64;
    for _ in 0..50 {
        let rows = 1 + (rng.next_below(16) as usize);
        let cols = 1 + (rng.next_below(16) as usize);
        let m = gaussian_matrix(rows, cols, 3.0, rng.next_u64()).unwrap();
        let s = row_softmax(&m).unwrap();
        for sum in s.row_sums() {
            worst = worst.max((sum - 1.0).abs());
        }
    }
    out.push(CheckResult::new(
        "linalg.row_softmax.row_sums",
        worst <= 1e-12,
        worst,
        "rows sum to 1 within 1e-12 over 50 random matrices",
    ));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let m = gaussian_matrix(6, 5, 2.0, rng.next_u64()).unwrap();
        let shift = (rng.next_f64() - 0.5) * 100.0;
        let b = row_softmax(&m.map(|x| x + shift)).unwrap();
        let a = row_softmax(&m).unwrap();
        worst = worst.max(a.max_abs_diff(&b).unwrap());
    }
    out.push(CheckResult::new(
        "linalg.row_softmax.shift_invariance",
        worst <= 1e-12,
        worst,
        "per-row constant shifts leave the softmax unchanged",
    ));

    let mut worst_orth = 0.0f64;
    let mut worst_recon = 0.0f64;
    for i in 0..100 {
        let n = 2 + (i * 5) % 63;
        let s = random_symmetric(n, rng.next_u64());
        let eig = sym_eig(&s).unwrap();
        worst_orth = worst_orth.max(eig.orthonormality_residual());
        let bound = s.max_abs().max(1.0);
        worst_recon = worst_recon.max(eig.reconstruction_residual(&s) / bound);
    }
    out.push(CheckResult::new(
        "linalg.sym_eig.orthonormality",
        worst_orth <= 1e-10,
        worst_orth,
        "U^T U = I within 1e-10 over 100 random symmetric matrices up to 64x64",
    ));
    out.push(CheckResult::new(
        "linalg.sym_eig.reconstruction",
        worst_recon <= 1e-8,
        worst_recon,
        "U diag(l) U^T recovers S within 1e-8 * max(1, |S|_max)",
    ));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = 2 + rng.next_below(6) as usize;
        let diag_a: Vec<f64> = (0..n).map(|_| 0.5 + rng.next_f64() * 3.0).collect();
        let diag_b: Vec<f64> = (0..n).map(|_| 0.5 + rng.next_f64() * 3.0).collect();
        let a = Matrix::from_diag(&diag_a);
        let b = Matrix::from_diag(&diag_b);
        let lhs = log_det_psd(&a).unwrap() + log_det_psd(&b).unwrap();
        let rhs = log_det_psd(&a.matmul(&b).unwrap()).unwrap();
        worst = worst.max((lhs - rhs).abs());
    }
    out.push(CheckResult::new(
        "linalg.log_det.multiplicative",
        worst <= 1e-9,
        worst,
        "log det(AB) = log det A + log det B for commuting PD diagonals",
    ));

    let a = gaussian_matrix(4, 4, 1.0, 7).unwrap();
    let b = gaussian_matrix(4, 4, 1.0, 7).unwrap();
    let identical = a.as_slice() == b.as_slice();
    out.push(CheckResult::new(
        "linalg.gaussian.determinism",
        identical,
        if identical { 0.0 } else { 1.0 },
        "identical seeds produce bit-identical matrices",
    ));

    let d = 784.0f64;
    let m = gaussian_matrix(1000, 100, 1.0 / d.sqrt(), rng.next_u64()).unwrap();
    let n = m.as_slice().len() as f64;
    let mean: f64 = m.as_slice().iter().sum::<f64>() / n;
    let var: f64 = m.as_slice().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let rel = (var - 1.0 / d).abs() * d;
    out.push(CheckResult::new(
        "linalg.gaussian.variance",
        rel <= 0.05,
        rel,
        "sample variance of 1e5 draws within 5% of 1/784",
    ));

    out
}

fn graph_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = SplitMix64::new(SUITE_SEED ^ 0x67726170);

    let mut worst = 0.0f64;
    for _ in 0..30 {
        let n = 3 + rng.next_below(8) as usize;
        let z = gaussian_matrix(n, 3, 1.0, rng.next_u64()).unwrap();
        let a = soft_adjacency(&z, 1.0 + rng.next_f64() * 10.0, &mask_none(n)).unwrap();
        let l = soft_laplacian(&a).unwrap();
        for sum in l.row_sums() {
            worst = worst.max(sum.abs());
        }
    }
    out.push(CheckResult::new(
        "graph.soft_laplacian.zero_row_sums",
        worst <= 1e-12,
        worst,
        "L 1 = 0 within 1e-12 for soft Laplacians of random latents",
    ));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let z = gaussian_matrix(6, 3, 1.0, rng.next_u64()).unwrap();
        let r = random_orthogonal(3, rng.next_u64()).unwrap();
        let a = soft_adjacency(&z, 2.0, &mask_none(6)).unwrap();
        let b = soft_adjacency(&z.matmul(&r).unwrap(), 2.0, &mask_none(6)).unwrap();
        worst = worst.max(a.max_abs_diff(&b).unwrap());
    }
    out.push(CheckResult::new(
        "graph.soft_adjacency.rotation_invariance",
        worst <= 1e-10,
        worst,
        "orthogonal latent rotations leave the adjacency unchanged",
    ));

    let mut min_margin = f64::INFINITY;
    for _ in 0..20 {
        let z = gaussian_matrix(5, 3, 0.3, rng.next_u64()).unwrap();
        let mut prev: Option<Vec<f64>> = None;
        for &kappa in &[1.0, 10.0, 30.0] {
            let a = soft_adjacency(&z, kappa, &mask_none(5)).unwrap();
            let maxes: Vec<f64> = (0..5)
                .map(|i| a.row(i).iter().fold(0.0f64, |m, &v| m.max(v)))
                .collect();
            if let Some(p) = prev {
                for (pa, cb) in p.iter().zip(&maxes) {
                    min_margin = min_margin.min(cb - pa);
                }
            }
            prev = Some(maxes);
        }
    }
    out.push(CheckResult::new(
        "graph.soft_adjacency.kappa_monotonicity",
        min_margin > 0.0,
        min_margin,
        "row maxima strictly increase across kappa in {1, 10, 30}",
    ));

    let mut mismatches = 0usize;
    for _ in 0..10 {
        let n = 10 + rng.next_below(41) as usize;
        let k = 1 + rng.next_below(5) as usize;
        let y = gaussian_matrix(n, 4, 1.0, rng.next_u64()).unwrap();
        let g = knn_graph(&y, k).unwrap();
        // Exhaustive oracle via repeated linear-scan selection.
        for i in 0..n {
            let mut chosen: Vec<usize> = Vec::new();
            for _ in 0..k {
                let mut best: Option<(f64, usize)> = None;
                for j in 0..n {
                    if j == i || chosen.contains(&j) {
                        continue;
                    }
                    let d2: f64 = y
                        .row(i)
                        .iter()
                        .zip(y.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let better = match best {
                        None => true,
                        Some((bd, bj)) => d2 < bd || (d2 == bd && j < bj),
                    };
                    if better {
                        best = Some((d2, j));
                    }
                }
                chosen.push(best.unwrap().1);
            }
            for j in chosen {
                if g.adjacency.get(i, j) != 1.0 || g.adjacency.get(j, i) != 1.0 {
                    mismatches += 1;
                }
            }
        }
    }
    out.push(CheckResult::new(
        "graph.knn.oracle_match",
        mismatches == 0,
        mismatches as f64,
        "kNN graph equals exhaustive-search oracle on random instances up to n=50",
    ));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = 8 + rng.next_below(12) as usize;
        let y = gaussian_matrix(n, 3, 1.0, rng.next_u64()).unwrap();
        let g = knn_graph(&y, 2).unwrap();
        for sum in g.laplacian.row_sums() {
            worst = worst.max(sum.abs());
        }
        let eig = sym_eig(&g.laplacian).unwrap();
        worst = worst.max((-eig.values[0]).max(0.0));
    }
    out.push(CheckResult::new(
        "graph.knn.laplacian_identities",
        worst <= 1e-9,
        worst,
        "L 1 = 0 and min eigenvalue >= -1e-9 for kNN Laplacians",
    ));

    out
}

fn objective_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = SplitMix64::new(SUITE_SEED ^ 0x6f626a65);

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = 4 + rng.next_below(13) as usize;
        let q = 1 + rng.next_below(8.min(n as u64 - 1)) as usize;
        let x = gaussian_matrix(n, q, 1.0, rng.next_u64()).unwrap();
        let l = random_symmetric(n, rng.next_u64());
        let beta = 0.2 + rng.next_f64();
        let g = grad_data(&x, &l).unwrap();
        let fd = finite_diff(&|x| data_term(x, &l, beta).unwrap(), &x, 1e-6);
        worst = worst.max(rel_err(&g, &fd));
    }
    out.push(CheckResult::new(
        "objective.grad_data.finite_difference",
        worst <= 1e-6,
        worst,
        "2 L X matches central differences of the frozen data term",
    ));

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = 4 + rng.next_below(13) as usize;
        let q = 1 + rng.next_below(8.min(n as u64 - 1)) as usize;
        let x = gaussian_matrix(n, q, 1.0, rng.next_u64()).unwrap();
        let beta = 0.2 + rng.next_f64();
        let g = grad_reg_exact(&x, beta).unwrap();
        let fd = finite_diff(&|x| reg_term(x, beta).unwrap(), &x, 1e-6);
        worst = worst.max(rel_err(&g, &fd));
    }
    out.push(CheckResult::new(
        "objective.grad_reg_exact.finite_difference",
        worst <= 1e-6,
        worst,
        "2 X (X^T X + beta I)^{-1} matches central differences of the log-det term",
    ));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x = gaussian_matrix(6, 3, 1.0, rng.next_u64()).unwrap();
        let l = random_symmetric(6, rng.next_u64());
        let params = ObjectiveParams::new(0.8, 1.0, 3, 10).unwrap();
        let base = kl_objective(&x, &l, &params).unwrap();
        let r = random_orthogonal(3, rng.next_u64()).unwrap();
        let rotated = kl_objective(&x.matmul(&r).unwrap(), &l, &params).unwrap();
        worst = worst.max((rotated - base).abs());
    }
    out.push(CheckResult::new(
        "objective.kl.rotation_invariance",
        worst <= 1e-9,
        worst,
        "objective is invariant to latent rotations",
    ));

    let p3 = Matrix::from_rows(&[
        vec![1.0, -1.0, 0.0],
        vec![-1.0, 2.0, -1.0],
        vec![0.0, -1.0, 1.0],
    ])
    .unwrap();
    let x = constrained_embedding(&p3, 1).unwrap();
    let c = std::f64::consts::FRAC_1_SQRT_2;
    let sign = x.get(0, 0).signum();
    let residual = (x.get(0, 0) - sign * c)
        .abs()
        .max(x.get(1, 0).abs())
        .max((x.get(2, 0) + sign * c).abs())
        .max((data_term(&x, &p3, 0.0).unwrap() - 1.0).abs());
    out.push(CheckResult::new(
        "objective.constrained.path_graph",
        residual <= 1e-9,
        residual,
        "3-point chain embedding is (1, 0, -1)/sqrt(2) up to sign with trace 1",
    ));

    let mut descent_ok = true;
    let mut worst_gain = f64::NEG_INFINITY;
    for _ in 0..10 {
        let z = gaussian_matrix(8, 3, 1.0, rng.next_u64()).unwrap();
        let x = project_rows(&z).unwrap();
        let a = soft_adjacency(&x, 3.0, &mask_none(8)).unwrap();
        let l = soft_laplacian(&a).unwrap();
        let before = data_term(&x, &l, 0.5).unwrap();
        let mut stepped = x.clone();
        stepped.add_scaled(&grad_data(&x, &l).unwrap(), -0.1).unwrap();
        let after = data_term(&stepped, &l, 0.5).unwrap();
        descent_ok &= after < before;
        worst_gain = worst_gain.max(after - before);
    }
    out.push(CheckResult::new(
        "objective.descent.data_term",
        descent_ok,
        worst_gain,
        "a 0.1-step along -grad strictly decreases the frozen data term",
    ));

    // Reported, not asserted: how each linearized regulariser scale tracks
    // the exact gradient for projected rows with n >= 4q.
    let (n, q, beta) = (24usize, 4usize, 0.7f64);
    let x = project_rows(&gaussian_matrix(n, q, 1.0, rng.next_u64()).unwrap()).unwrap();
    let exact = grad_reg_exact(&x, beta).unwrap();
    let paper = grad_reg_approx(&x, beta, q);
    let spread = x.scaled(reg_factor_spread(n, q, beta));
    let paper_res = exact.sub(&paper).unwrap().frobenius_norm();
    let spread_res = exact.sub(&spread).unwrap().frobenius_norm();
    out.push(CheckResult::new(
        "objective.reg_approx.report",
        true,
        paper_res,
        format!(
            "reported only: |exact - 2/(q+beta) X|_F = {paper_res:.3e}, |exact - 2q/(n+beta q) X|_F = {spread_res:.3e}"
        ),
    ));

    out
}

fn block_suite() -> Vec<CheckResult> {
    block_suite_with_mode(AttentionMode::Diffusion)
}

/// The block suite parameterized over the attention mode actually used in
/// the forward pass; anything but diffusion must fail the equivalence check
/// (the negative control for an injected sign bug).
pub(crate) fn block_suite_with_mode(mode: AttentionMode) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = SplitMix64::new(SUITE_SEED ^ 0x626c6f63);

    let mut worst = 0.0f64;
    for i in 0..20 {
        let n = 4 + (i as usize % 29);
        let q = 2 + (i as usize % 7);
        let kappa = 2.0 + rng.next_f64() * 3.0;
        let eta = 0.05 + rng.next_f64() * 0.45;
        let beta = 0.5 + rng.next_f64();
        let x = project_rows(&gaussian_matrix(n, q, 1.0, rng.next_u64()).unwrap()).unwrap();
        let mut w = BlockWeights::derivation_init(q, kappa, eta, beta).unwrap();
        w.mode = mode;
        let mask = mask_none(n);
        let block = block_forward(&x, &w, &mask).unwrap();
        let adj = soft_adjacency(&x, kappa, &mask).unwrap();
        let lap = soft_laplacian(&adj).unwrap();
        let reference = gd_reference_step(&x, &lap, eta, beta, q).unwrap();
        worst = worst.max(block.max_abs_diff(&reference).unwrap());
    }
    out.push(CheckResult::new(
        "block.gd_equivalence",
        worst <= 1e-10,
        worst,
        "derivation-faithful block equals the projected gradient step within 1e-10",
    ));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (n, q) = (6, 4);
        let x = project_rows(&gaussian_matrix(n, q, 1.0, rng.next_u64()).unwrap()).unwrap();
        let mut w = BlockWeights::derivation_init(q, 3.0, 0.4, 1.0).unwrap();
        let mask = mask_none(n);
        w.mode = AttentionMode::Standard;
        let standard = attention_step(&x, &w, &mask).unwrap();
        w.mode = AttentionMode::Diffusion;
        let diffusion = attention_step(&x, &w, &mask).unwrap();
        let delta = standard.sub(&diffusion).unwrap();
        worst = worst.max(delta.max_abs_diff(&x.matmul(&w.w_v).unwrap()).unwrap());
    }
    out.push(CheckResult::new(
        "block.mode_delta_is_value_path",
        worst <= 1e-12,
        worst,
        "standard minus diffusion equals X W_v to round-off",
    ));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (n, q, kappa) = (12, 6, 30.0);
        let w = BlockWeights::experiment_init(n, q, kappa, 0.4, 1.0).unwrap();
        let x = layer_norm_rows(
            &gaussian_matrix(n, q, 1.0, rng.next_u64()).unwrap(),
            &vec![1.0 / (n as f64).sqrt(); q],
        )
        .unwrap();
        let logits = w.logits(&x).unwrap();
        for i in 0..n {
            worst = worst.max((logits.get(i, i) - kappa).abs());
        }
    }
    out.push(CheckResult::new(
        "block.logit_diagonal_kappa",
        worst <= 1e-9,
        worst,
        "pre-mask logit diagonal equals kappa for exactly-normalized rows",
    ));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x = gaussian_matrix(5, 4, 1.0, rng.next_u64()).unwrap();
        let once = project_rows(&x).unwrap();
        let twice = project_rows(&once).unwrap();
        worst = worst.max(once.max_abs_diff(&twice).unwrap());
        let ln = layer_norm_rows(&x, &vec![0.5; 4]).unwrap();
        let pr = project_rows(&x).unwrap();
        worst = worst.max(ln.max_abs_diff(&pr).unwrap());
    }
    out.push(CheckResult::new(
        "block.projection_idempotent_and_ln_equivalent",
        worst <= 1e-12,
        worst,
        "projection is idempotent; LayerNorm with 1/sqrt(q) gain equals it",
    ));

    let mut descent_ok = true;
    let mut worst_gain = f64::NEG_INFINITY;
    for i in 0..10 {
        let n = 8 + (i as usize % 8);
        let q = 3 + (i as usize % 4);
        let eta = [0.1, 0.25, 0.5][i as usize % 3];
        let x = project_rows(&gaussian_matrix(n, q, 1.0, rng.next_u64()).unwrap()).unwrap();
        let w = BlockWeights::derivation_init(q, 3.0, eta, 1.0).unwrap();
        let mask = mask_none(n);
        let adj = soft_adjacency(&x, 3.0, &mask).unwrap();
        let lap = soft_laplacian(&adj).unwrap();
        let before = data_term(&x, &lap, 1.0).unwrap();
        let stepped = attention_step(&x, &w, &mask).unwrap();
        let after = data_term(&stepped, &lap, 1.0).unwrap();
        descent_ok &= after < before;
        worst_gain = worst_gain.max(after - before);
    }
    out.push(CheckResult::new(
        "block.frozen_data_term_descent",
        descent_ok,
        worst_gain,
        "one attention step decreases the frozen data term before re-projection",
    ));

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        let results = run_suite(Suite::All);
        assert!(!results.is_empty());
        for r in &results {
            assert!(r.passed, "{} failed with residual {:.3e}", r.name, r.max_residual);
        }
    }

    #[test]
    fn suites_are_deterministic() {
        let a = run_suite(Suite::Objective);
        let b = run_suite(Suite::Objective);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.max_residual.to_bits(), y.max_residual.to_bits());
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        // Negative control: running the block in standard mode (the sign
        // flip on the identity subtraction) must fail the named
        // equivalence check.
        let results = block_suite_with_mode(AttentionMode::Standard);
        let gd = results
            .iter()
            .find(|r| r.name == "block.gd_equivalence")
            .expect("check exists");
        assert!(!gd.passed);
    }

    #[test]
    fn suite_names_parse() {
        for name in ["linalg", "graph", "objective", "block", "all"] {
            let suite: Suite = name.parse().unwrap();
            assert!(!run_suite(suite).is_empty());
        }
        assert!("bogus".parse::<Suite>().is_err());
    }
}
