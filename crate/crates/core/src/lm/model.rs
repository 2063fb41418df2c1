//! The decoder transformer: token + learned positional embeddings, then per
//! layer LayerNorm -> multi-head causal self-attention -> residual,
//! LayerNorm -> ReLU MLP -> residual, with a final LayerNorm and vocabulary
//! projection.
//!
//! Each head builds a row-stochastic causal attention matrix `A_h` and mixes
//! values with `A_h` in standard mode or `A_h - I` in diffusion mode; that
//! subtraction is the only difference between the modes. Unlike the unrolled
//! block, training differentiates straight through the attention matrix (no
//! stop-grad).

use crate::block::AttentionMode;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, SplitMix64};

pub(crate) const TAG_PARAMS: u64 = 0x706172616d; // "param"

/// Model shape and mode.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub block_size: usize,
    pub n_layer: usize,
    pub n_head: usize,
    pub n_embd: usize,
    pub attention_mode: AttentionMode,
    pub dropout: f64,
    pub seed: u64,
}

impl LmConfig {
    /// Desk-scale defaults; `vocab_size` is resolved from the corpus at
    /// training time when left at zero.
    pub fn desk_scale(attention_mode: AttentionMode, seed: u64) -> Self {
        LmConfig {
            vocab_size: 0,
            block_size: 64,
            n_layer: 2,
            n_head: 2,
            n_embd: 128,
            attention_mode,
            dropout: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_embd == 0 || self.n_head == 0 || self.n_layer == 0 {
            return Err(Error::invalid_parameter("model dims must be at least 1"));
        }
        if self.n_embd % self.n_head != 0 {
            return Err(Error::invalid_parameter(format!(
                "n_embd={} must be divisible by n_head={}",
                self.n_embd, self.n_head
            )));
        }
        if self.block_size == 0 {
            return Err(Error::invalid_parameter("block_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid_parameter(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.n_embd / self.n_head
    }

    /// MLP hidden width. Twice the embedding dim: at desk scale on one
    /// CPU core the MLP dominates the arithmetic, and the 2x expansion
    /// trains just as well at this size.
    pub fn mlp_dim(&self) -> usize {
        2 * self.n_embd
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1: Matrix,
    /// Fused query/key/value projection, `C x 3C`: columns `[0, C)` are the
    /// query weights, `[C, 2C)` the keys, `[2C, 3C)` the values.
    pub w_qkv: Matrix,
    pub w_o: Matrix,
    pub ln2: Matrix,
    pub w_fc: Matrix,
    pub w_proj: Matrix,
}

/// All trainable tensors. LayerNorm gains are stored as 1 x C matrices so
/// every parameter walks through the same tensor list.
#[derive(Debug, Clone, PartialEq)]
pub struct GptParams {
    pub wte: Matrix,
    pub wpe: Matrix,
    pub layers: Vec<LayerParams>,
    pub ln_f: Matrix,
    pub lm_head: Matrix,
}

impl GptParams {
    /// Seeded initialization: weights `N(0, 0.02)` with residual projections
    /// scaled down by `1/sqrt(2 n_layer)`, LayerNorm gains 1, all drawn from
    /// one sub-stream of the config seed in a fixed tensor order.
    pub fn init(cfg: &LmConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.vocab_size == 0 {
            return Err(Error::invalid_parameter("vocab_size must be resolved before init"));
        }
        let (v, c, h) = (cfg.vocab_size, cfg.n_embd, cfg.mlp_dim());
        let mut rng = SplitMix64::new(derive_seed(cfg.seed, TAG_PARAMS));
        let std = 0.02;
        let resid_std = std / (2.0 * cfg.n_layer as f64).sqrt();
        let mut draw = |rows: usize, cols: usize, std: f64| -> Matrix {
            let mut m = Matrix::zeros(rows, cols);
            rng.fill_gaussian(m.as_mut_slice(), std);
            m
        };
        let wte = draw(v, c, std);
        let wpe = draw(cfg.block_size, c, std);
        let mut layers = Vec::with_capacity(cfg.n_layer);
        for _ in 0..cfg.n_layer {
            layers.push(LayerParams {
                ln1: Matrix::new(1, c, vec![1.0; c])?,
                w_qkv: draw(c, 3 * c, std),
                w_o: draw(c, c, resid_std),
                ln2: Matrix::new(1, c, vec![1.0; c])?,
                w_fc: draw(c, h, std),
                w_proj: draw(h, c, resid_std),
            });
        }
        let ln_f = Matrix::new(1, c, vec![1.0; c])?;
        let lm_head = draw(c, v, std);
        Ok(GptParams {
            wte,
            wpe,
            layers,
            ln_f,
            lm_head,
        })
    }

    pub fn zeros_like(&self) -> GptParams {
        GptParams {
            wte: Matrix::zeros(self.wte.rows(), self.wte.cols()),
            wpe: Matrix::zeros(self.wpe.rows(), self.wpe.cols()),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1: Matrix::zeros(1, l.ln1.cols()),
                    w_qkv: Matrix::zeros(l.w_qkv.rows(), l.w_qkv.cols()),
                    w_o: Matrix::zeros(l.w_o.rows(), l.w_o.cols()),
                    ln2: Matrix::zeros(1, l.ln2.cols()),
                    w_fc: Matrix::zeros(l.w_fc.rows(), l.w_fc.cols()),
                    w_proj: Matrix::zeros(l.w_proj.rows(), l.w_proj.cols()),
                })
                .collect(),
            ln_f: Matrix::zeros(1, self.ln_f.cols()),
            lm_head: Matrix::zeros(self.lm_head.rows(), self.lm_head.cols()),
        }
    }

    /// Tensor names in the canonical iteration order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["wte".to_string(), "wpe".to_string()];
        for i in 0..self.layers.len() {
            for t in ["ln1", "w_qkv", "w_o", "ln2", "w_fc", "w_proj"] {
                names.push(format!("layer{i}.{t}"));
            }
        }
        names.push("ln_f".to_string());
        names.push("lm_head".to_string());
        names
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.wte, &self.wpe];
        for l in &self.layers {
            out.extend([&l.ln1, &l.w_qkv, &l.w_o, &l.ln2, &l.w_fc, &l.w_proj]);
        }
        out.push(&self.ln_f);
        out.push(&self.lm_head);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![&mut self.wte, &mut self.wpe];
        for l in &mut self.layers {
            out.push(&mut l.ln1);
            out.push(&mut l.w_qkv);
            out.push(&mut l.w_o);
            out.push(&mut l.ln2);
            out.push(&mut l.w_fc);
            out.push(&mut l.w_proj);
        }
        out.push(&mut self.ln_f);
        out.push(&mut self.lm_head);
        out
    }

    /// Which tensors receive weight decay: 2-D weights yes, LayerNorm gains
    /// no (the 1 x C tensors).
    pub fn decay_mask(&self) -> Vec<bool> {
        self.tensors().iter().map(|t| t.rows() > 1).collect()
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub normalized: Matrix,
    pub output: Matrix,
    pub inv_std: Vec<f64>,
}

fn layer_norm(x: &Matrix, gain: &Matrix) -> LnCache {
    let (rows, cols) = (x.rows(), x.cols());
    let mut normalized = Matrix::zeros(rows, cols);
    let mut output = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    let g = gain.row(0);
    for i in 0..rows {
        let row = x.row(i);
        let mean: f64 = row.iter().sum::<f64>() / cols as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        let nrow = normalized.row_mut(i);
        for j in 0..cols {
            nrow[j] = (row[j] - mean) * inv;
        }
        let orow = output.row_mut(i);
        let nrow = normalized.row(i);
        for j in 0..cols {
            orow[j] = nrow[j] * g[j];
        }
    }
    LnCache {
        normalized,
        output,
        inv_std,
    }
}

pub(crate) fn layer_norm_backward(cache: &LnCache, gain: &Matrix, d_out: &Matrix) -> (Matrix, Matrix) {
    let (rows, cols) = (d_out.rows(), d_out.cols());
    let mut d_input = Matrix::zeros(rows, cols);
    let mut d_gain = Matrix::zeros(1, cols);
    let g = gain.row(0);
    for i in 0..rows {
        let inv = cache.inv_std[i];
        let drow = d_out.row(i);
        let nrow = cache.normalized.row(i);
        let grow = d_gain.row_mut(0);
        let mut mean_dn = 0.0;
        let mut mean_dn_n = 0.0;
        for j in 0..cols {
            let dn = drow[j] * g[j];
            mean_dn += dn;
            mean_dn_n += dn * nrow[j];
            grow[j] += drow[j] * nrow[j];
        }
        mean_dn /= cols as f64;
        mean_dn_n /= cols as f64;
        let irow = d_input.row_mut(i);
        for j in 0..cols {
            let dn = drow[j] * g[j];
            irow[j] = inv * (dn - mean_dn - nrow[j] * mean_dn_n);
        }
    }
    (d_input, d_gain)
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    /// Row-stochastic causal attention probabilities (before any identity
    /// subtraction or dropout).
    pub probs: Matrix,
    /// Inverted-scaling dropout mask on the mixing matrix, when dropout > 0.
    pub drop_mask: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub ln1: LnCache,
    /// Fused projections, `rows x 3C`, laid out `[Q | K | V]`.
    pub qkv: Matrix,
    pub heads: Vec<HeadCache>,
    pub att_mixed: Matrix,
    pub ln2: LnCache,
    pub fc_pre: Matrix,
    pub fc_act: Matrix,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) tokens: Vec<usize>,
    pub(crate) batch_size: usize,
    pub(crate) seq_len: usize,
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) ln_f: LnCache,
    pub logits: Matrix,
}

/// The mixing matrix each head applies to its values.
pub(crate) fn mixing_matrix(probs: &Matrix, mode: AttentionMode, drop_mask: Option<&Matrix>) -> Matrix {
    let mut mix = probs.clone();
    if mode == AttentionMode::Diffusion {
        for i in 0..mix.rows() {
            let v = mix.get(i, i) - 1.0;
            mix.set(i, i, v);
        }
    }
    if let Some(mask) = drop_mask {
        for (m, d) in mix.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *m *= d;
        }
    }
    mix
}

/// Runs the decoder stack over a flattened `(batch, seq)` token buffer and
/// returns per-position vocabulary logits plus every intermediate needed by
/// the backward pass. `dropout_rng` enables training-mode dropout on the
/// attention mixing matrices; pass `None` for evaluation.
pub fn lm_forward(
    params: &GptParams,
    cfg: &LmConfig,
    tokens: &[usize],
    batch_size: usize,
    seq_len: usize,
    mut dropout_rng: Option<&mut SplitMix64>,
) -> Result<(Matrix, ForwardCache)> {
    cfg.validate()?;
    if tokens.len() != batch_size * seq_len {
        return Err(Error::shape(format!(
            "lm_forward: {} tokens for batch {batch_size} x seq {seq_len}",
            tokens.len()
        )));
    }
    if seq_len > cfg.block_size {
        return Err(Error::invalid_input(format!(
            "lm_forward: sequence length {seq_len} exceeds block size {}",
            cfg.block_size
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::invalid_input(format!(
            "lm_forward: token id {bad} out of range for vocab {}",
            cfg.vocab_size
        )));
    }

    let rows = batch_size * seq_len;
    let c = cfg.n_embd;
    let (nh, hs) = (cfg.n_head, cfg.head_dim());
    let scale = 1.0 / (hs as f64).sqrt();

    let mut x = Matrix::zeros(rows, c);
    for r in 0..rows {
        let tok = tokens[r];
        let pos = r % seq_len;
        let row = x.row_mut(r);
        for (j, v) in row.iter_mut().enumerate() {
            *v = params.wte.get(tok, j) + params.wpe.get(pos, j);
        }
    }

    let mut layer_caches = Vec::with_capacity(cfg.n_layer);
    for layer in &params.layers {
        let ln1 = layer_norm(&x, &layer.ln1);
        let qkv = ln1.output.matmul(&layer.w_qkv)?;

        let mut att_mixed = Matrix::zeros(rows, c);
        let mut heads = Vec::with_capacity(batch_size * nh);
        let mut scores = Matrix::zeros(seq_len, seq_len);
        let stride = 3 * c;
        for b in 0..batch_size {
            for h in 0..nh {
                let q_off = b * seq_len * stride + h * hs;
                let k_off = q_off + c;
                let v_off = q_off + 2 * c;
                // scores = scale * Q_blk K_blk^T, straight off the strided
                // head views of the fused projection.
                crate::matrix::dgemm_view(
                    seq_len, hs, seq_len, scale,
                    qkv.as_slice(), q_off, stride as isize, 1,
                    qkv.as_slice(), k_off, 1, stride as isize,
                    0.0,
                    scores.as_mut_slice(), 0, seq_len as isize, 1,
                );
                // Causal softmax over each row's prefix; entries past the
                // diagonal stay exactly zero.
                let mut probs = Matrix::zeros(seq_len, seq_len);
                for i in 0..seq_len {
                    let row = scores.row(i);
                    let max = row[..=i].iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let prow = probs.row_mut(i);
                    let mut sum = 0.0;
                    for j in 0..=i {
                        let e = (row[j] - max).exp();
                        prow[j] = e;
                        sum += e;
                    }
                    for p in prow[..=i].iter_mut() {
                        *p /= sum;
                    }
                }

                let drop_mask = match (&mut dropout_rng, cfg.dropout > 0.0) {
                    (Some(rng), true) => {
                        let keep = 1.0 - cfg.dropout;
                        let mut mask = Matrix::zeros(seq_len, seq_len);
                        for val in mask.as_mut_slice().iter_mut() {
                            *val = if rng.next_f64() < keep { 1.0 / keep } else { 0.0 };
                        }
                        Some(mask)
                    }
                    _ => None,
                };

                let mix = mixing_matrix(&probs, cfg.attention_mode, drop_mask.as_ref());
                // att_blk = mix V_blk, written into the head's column block.
                crate::matrix::dgemm_view(
                    seq_len, seq_len, hs, 1.0,
                    mix.as_slice(), 0, seq_len as isize, 1,
                    qkv.as_slice(), v_off, stride as isize, 1,
                    0.0,
                    att_mixed.as_mut_slice(), b * seq_len * c + h * hs, c as isize, 1,
                );
                heads.push(HeadCache { probs, drop_mask });
            }
        }

        let att_out = att_mixed.matmul(&layer.w_o)?;
        let mut x_after_att = x.clone();
        x_after_att.add_scaled(&att_out, 1.0)?;

        let ln2 = layer_norm(&x_after_att, &layer.ln2);
        let fc_pre = ln2.output.matmul(&layer.w_fc)?;
        let fc_act = fc_pre.map(|v| v.max(0.0));
        let mlp_out = fc_act.matmul(&layer.w_proj)?;
        let mut x_after_mlp = x_after_att.clone();
        x_after_mlp.add_scaled(&mlp_out, 1.0)?;

        layer_caches.push(LayerCache {
            ln1,
            qkv,
            heads,
            att_mixed,
            ln2,
            fc_pre,
            fc_act,
        });
        x = x_after_mlp;
    }

    let ln_f = layer_norm(&x, &params.ln_f);
    let logits = ln_f.output.matmul(&params.lm_head)?;

    let cache = ForwardCache {
        tokens: tokens.to_vec(),
        batch_size,
        seq_len,
        layers: layer_caches,
        ln_f,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

/// Mean negative log-likelihood of the targets under row-wise softmax,
/// stabilized by the row maximum.
pub fn cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<f64> {
    if targets.len() != logits.rows() {
        return Err(Error::shape(format!(
            "cross_entropy: {} targets for {} rows",
            targets.len(),
            logits.rows()
        )));
    }
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        if t >= logits.cols() {
            return Err(Error::invalid_input(format!(
                "cross_entropy: target {t} out of range for {} classes",
                logits.cols()
            )));
        }
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[t];
    }
    Ok(total / targets.len() as f64)
}
