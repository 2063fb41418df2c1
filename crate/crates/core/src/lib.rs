//! Unrolled transformer blocks as optimisation steps on a graph-Laplacian
//! objective, the closed-form spectral embeddings that objective admits, a
//! dimensionality-reduction pipeline built from those blocks, and a
//! desk-scale character language model comparing standard attention against
//! graph diffusion (attention minus identity).

pub mod block;
pub mod dimred;
pub mod eigen;
pub mod error;
pub mod graph;
pub mod lm;
pub mod matrix;
pub mod objective;
pub mod rng;
pub mod verify;

pub use block::{
    attention_step, block_forward, ffn_step, gd_reference_step, layer_norm_rows, project_rows,
    step_size_from_weight, AttentionMode, BlockWeights, LogitScale,
};
pub use dimred::{
    cluster_ratio, emit_scatter, load_idx, make_blobs, random_projection, run_pipeline, unroll,
    LabeledDataset, PipelineConfig, UnrollTrace,
};
pub use eigen::{log_det_psd, psd_inverse, sym_eig, EigenPair};
pub use error::{Error, Result};
pub use graph::{
    adjacency_match_score, knn_graph, mask_causal, mask_none, mask_self_exclusion, mask_with_beta,
    soft_adjacency, soft_laplacian, GraphSpec, KnnGraph, DEFAULT_IOTA,
};
pub use matrix::{row_softmax, Matrix};
pub use objective::{
    closed_form_embedding, constrained_embedding, data_term, grad_data, grad_reg_approx,
    grad_reg_exact, kl_objective, reg_factor_spread, reg_term, EmbeddingState, ObjectiveParams,
};
pub use rng::{derive_seed, gaussian_matrix, mix64, random_orthogonal, SplitMix64};
pub use verify::{run_suite, CheckResult, Suite};
