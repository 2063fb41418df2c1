//! AdamW with decoupled weight decay and global-norm gradient clipping.
//! Decay applies to 2-D weights only; LayerNorm gains are exempt.

use super::model::GptParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate down to a tenth of it, no warmup.
    Cosine,
}

#[derive(Debug)]
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(params: &GptParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.as_slice().len()).collect();
        AdamW {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut GptParams, grads: &GptParams, lr: f64, weight_decay: f64) {
        self.steps += 1;
        let t = self.steps as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let decay_mask = params.decay_mask();
        let grad_tensors = grads.tensors();
        for (ti, param) in params.tensors_mut().into_iter().enumerate() {
            let g = grad_tensors[ti].as_slice();
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            let decay = if decay_mask[ti] { weight_decay } else { 0.0 };
            for (e, p) in param.as_mut_slice().iter_mut().enumerate() {
                m[e] = self.beta1 * m[e] + (1.0 - self.beta1) * g[e];
                v[e] = self.beta2 * v[e] + (1.0 - self.beta2) * g[e] * g[e];
                let mhat = m[e] / bc1;
                let vhat = v[e] / bc2;
                *p -= lr * (mhat / (vhat.sqrt() + self.eps) + decay * *p);
            }
        }
    }
}

/// Scales all gradients so their global L2 norm does not exceed `clip`
/// (no-op when `clip` is zero). Returns the pre-clip norm.
pub fn clip_gradient_norm(grads: &mut GptParams, clip: f64) -> f64 {
    let mut sq = 0.0;
    for t in grads.tensors() {
        sq += t.as_slice().iter().map(|g| g * g).sum::<f64>();
    }
    let norm = sq.sqrt();
    if clip > 0.0 && norm > clip {
        let scale = clip / norm;
        for t in grads.tensors_mut() {
            for g in t.as_mut_slice() {
                *g *= scale;
            }
        }
    }
    norm
}
