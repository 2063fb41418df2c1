//! Desk-scale trainable character-level decoder transformer with a per-head
//! attention-mode toggle (standard `A` vs graph diffusion `A - I`), exact
//! hand-derived gradients, an AdamW trainer, and the seed-paired
//! mode-comparison harness.

pub mod adamw;
pub mod backward;
pub mod batches;
pub mod model;
pub mod train;
pub mod vocab;

pub use adamw::{clip_gradient_norm, AdamW, LrSchedule, OptimizerKind};
pub use backward::lm_backward;
pub use batches::{sample_batch, split_tokens, Batch, Split};
pub use model::{cross_entropy, lm_forward, ForwardCache, GptParams, LayerParams, LmConfig};
pub use train::{
    compare_modes, run_metrics_jsonl, synthetic_corpus, train, ComparisonReport, DifferencePoint,
    LossRecord, MedianPoint, MetricLine, ModeRun, SeedDifference, TrainConfig,
};
pub use vocab::CharVocab;
