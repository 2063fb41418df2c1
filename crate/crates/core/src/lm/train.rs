//! The training loop, the paired standard-vs-diffusion comparison harness,
//! and the metric emission formats (JSON-lines records and the median
//! difference CSV).

use std::time::Instant;

use crate::block::AttentionMode;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

use super::adamw::{clip_gradient_norm, AdamW, LrSchedule, OptimizerKind};
use super::batches::{sample_batch, split_tokens, Split};
use super::model::{cross_entropy, lm_forward, GptParams, LmConfig};
use super::vocab::CharVocab;

const TAG_EVAL: u64 = 0x6576616c; // "eval"
const TAG_DROPOUT: u64 = 0x64726f70; // "drop"
const TAG_CORPUS: u64 = 0x636f7270; // "corp"

/// Optimisation hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub eval_interval: usize,
    pub eval_iters: usize,
    pub optimizer: OptimizerKind,
    pub lr_schedule: LrSchedule,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.1,
            eval_interval: 100,
            eval_iters: 20,
            optimizer: OptimizerKind::AdamW,
            lr_schedule: LrSchedule::Constant,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.batch_size == 0 || self.eval_interval == 0 || self.eval_iters == 0 {
            return Err(Error::invalid_parameter("train counts must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid_parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::invalid_parameter(
                "weight decay and grad clip must be non-negative",
            ));
        }
        Ok(())
    }

    fn lr_at(&self, iter: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let min = self.learning_rate / 10.0;
                let progress = iter as f64 / self.max_iters as f64;
                min + 0.5 * (self.learning_rate - min) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// One training run: resolved configs, periodic loss records, wall time.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainRun {
    pub lm_config: LmConfig,
    pub train_config: TrainConfig,
    pub records: Vec<LossRecord>,
    pub wall_time_secs: f64,
}

fn estimate_loss(
    params: &GptParams,
    cfg: &LmConfig,
    region: &[usize],
    split: Split,
    iter: usize,
    train_cfg: &TrainConfig,
) -> Result<f64> {
    let eval_seed = derive_seed(derive_seed(cfg.seed, TAG_EVAL), iter as u64);
    let mut total = 0.0;
    for j in 0..train_cfg.eval_iters {
        let batch = sample_batch(
            region,
            cfg.block_size,
            train_cfg.batch_size,
            eval_seed,
            split,
            j as u64,
        )?;
        let (logits, _) = lm_forward(params, cfg, &batch.inputs, batch.batch_size, batch.seq_len, None)?;
        total += cross_entropy(&logits, &batch.targets)?;
    }
    Ok(total / train_cfg.eval_iters as f64)
}

/// Trains a model on a text corpus. The vocabulary is the corpus character
/// set; a zero `vocab_size` in the config is resolved from it. Records
/// train/val losses (means over `eval_iters` fresh batches) at iteration 0,
/// every `eval_interval`, and at the final iteration. Fully deterministic
/// for a fixed `(config, seed)`.
pub fn train(lm_cfg: &LmConfig, train_cfg: &TrainConfig, corpus: &str) -> Result<TrainRun> {
    train_cfg.validate()?;
    let start = Instant::now();
    let vocab = CharVocab::new(corpus)?;
    let mut cfg = lm_cfg.clone();
    if cfg.vocab_size == 0 {
        cfg.vocab_size = vocab.vocab_size();
    } else if cfg.vocab_size != vocab.vocab_size() {
        return Err(Error::invalid_input(format!(
            "configured vocab_size {} but corpus has {} distinct characters",
            cfg.vocab_size,
            vocab.vocab_size()
        )));
    }
    cfg.validate()?;
    let tokens = vocab.encode(corpus)?;
    let (train_region, val_region) = split_tokens(&tokens, 0.9)?;

    let mut params = GptParams::init(&cfg)?;
    let mut opt = AdamW::new(&params);
    let mut records = Vec::new();

    for iter in 0..=train_cfg.max_iters {
        if iter % train_cfg.eval_interval == 0 || iter == train_cfg.max_iters {
            let train_loss = estimate_loss(&params, &cfg, train_region, Split::Train, iter, train_cfg)?;
            let val_loss = estimate_loss(&params, &cfg, val_region, Split::Val, iter, train_cfg)?;
            if !train_loss.is_finite() || !val_loss.is_finite() {
                return Err(Error::NonFiniteLoss { iter });
            }
            records.push(LossRecord {
                iter,
                train_loss,
                val_loss,
            });
        }
        if iter == train_cfg.max_iters {
            break;
        }

        let batch = sample_batch(
            train_region,
            cfg.block_size,
            train_cfg.batch_size,
            cfg.seed,
            Split::Train,
            iter as u64,
        )?;
        let mut dropout_rng = (cfg.dropout > 0.0).then(|| {
            SplitMix64::new(derive_seed(derive_seed(cfg.seed, TAG_DROPOUT), iter as u64))
        });
        let (logits, cache) = lm_forward(
            &params,
            &cfg,
            &batch.inputs,
            batch.batch_size,
            batch.seq_len,
            dropout_rng.as_mut(),
        )?;
        let loss = cross_entropy(&logits, &batch.targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }
        let mut grads = super::backward::lm_backward(&params, &cfg, &cache, &batch.targets)?;
        clip_gradient_norm(&mut grads, train_cfg.grad_clip);
        opt.step(&mut params, &grads, train_cfg.lr_at(iter), train_cfg.weight_decay);
    }

    Ok(TrainRun {
        lm_config: cfg,
        train_config: train_cfg.clone(),
        records,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// One mode's run within a comparison.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModeRun {
    pub mode: AttentionMode,
    pub seed: u64,
    pub run: TrainRun,
}

/// Per-seed loss difference (standard minus diffusion; positive means the
/// diffusion run is ahead).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeedDifference {
    pub seed: u64,
    pub points: Vec<DifferencePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DifferencePoint {
    pub iter: usize,
    pub train_difference: f64,
    pub val_difference: f64,
}

/// Median curves across seeds at each recorded iteration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MedianPoint {
    pub iter: usize,
    pub train_standard: f64,
    pub train_diffusion: f64,
    pub train_difference: f64,
    pub val_standard: f64,
    pub val_diffusion: f64,
    pub val_difference: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<ModeRun>,
    pub per_seed_differences: Vec<SeedDifference>,
    pub medians: Vec<MedianPoint>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Trains one standard and one diffusion run per seed with otherwise
/// identical configs. Batch parity is structural: batches depend only on
/// `(seed, split, step)`, never on the attention mode, so the paired runs
/// consume bit-identical data.
pub fn compare_modes(
    lm_cfg: &LmConfig,
    train_cfg: &TrainConfig,
    corpus: &str,
    seeds: &[u64],
) -> Result<ComparisonReport> {
    if seeds.is_empty() {
        return Err(Error::invalid_parameter("compare_modes: need at least one seed"));
    }
    let mut runs = Vec::with_capacity(seeds.len() * 2);
    for &seed in seeds {
        for mode in [AttentionMode::Standard, AttentionMode::Diffusion] {
            let mut cfg = lm_cfg.clone();
            cfg.seed = seed;
            cfg.attention_mode = mode;
            runs.push(ModeRun {
                mode,
                seed,
                run: train(&cfg, train_cfg, corpus)?,
            });
        }
    }

    let mut per_seed_differences = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let standard = &runs
            .iter()
            .find(|r| r.seed == seed && r.mode == AttentionMode::Standard)
            .expect("run exists")
            .run;
        let diffusion = &runs
            .iter()
            .find(|r| r.seed == seed && r.mode == AttentionMode::Diffusion)
            .expect("run exists")
            .run;
        let points = standard
            .records
            .iter()
            .zip(&diffusion.records)
            .map(|(s, d)| DifferencePoint {
                iter: s.iter,
                train_difference: s.train_loss - d.train_loss,
                val_difference: s.val_loss - d.val_loss,
            })
            .collect();
        per_seed_differences.push(SeedDifference { seed, points });
    }

    let n_records = runs[0].run.records.len();
    let mut medians = Vec::with_capacity(n_records);
    for ri in 0..n_records {
        let collect = |mode: AttentionMode, f: &dyn Fn(&LossRecord) -> f64| -> Vec<f64> {
            runs.iter()
                .filter(|r| r.mode == mode)
                .map(|r| f(&r.run.records[ri]))
                .collect()
        };
        let mut ts = collect(AttentionMode::Standard, &|r| r.train_loss);
        let mut td = collect(AttentionMode::Diffusion, &|r| r.train_loss);
        let mut vs = collect(AttentionMode::Standard, &|r| r.val_loss);
        let mut vd = collect(AttentionMode::Diffusion, &|r| r.val_loss);
        let (ts, td, vs, vd) = (median(&mut ts), median(&mut td), median(&mut vs), median(&mut vd));
        medians.push(MedianPoint {
            iter: runs[0].run.records[ri].iter,
            train_standard: ts,
            train_diffusion: td,
            train_difference: ts - td,
            val_standard: vs,
            val_diffusion: vd,
            val_difference: vs - vd,
        });
    }

    Ok(ComparisonReport {
        seeds: seeds.to_vec(),
        runs,
        per_seed_differences,
        medians,
    })
}

/// One JSONL metric record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricLine {
    pub iter: usize,
    pub split: String,
    pub loss: f64,
    pub mode: AttentionMode,
    pub seed: u64,
}

/// JSON-lines loss records for one run; two lines (train and val) per
/// recorded iteration.
pub fn run_metrics_jsonl(run: &TrainRun, mode: AttentionMode, seed: u64) -> String {
    let mut out = String::new();
    for rec in &run.records {
        for (split, loss) in [("train", rec.train_loss), ("val", rec.val_loss)] {
            let line = MetricLine {
                iter: rec.iter,
                split: split.to_string(),
                loss,
                mode,
                seed,
            };
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        }
    }
    out
}

impl ComparisonReport {
    pub fn metrics_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            out.push_str(&run_metrics_jsonl(&r.run, r.mode, r.seed));
        }
        out
    }

    /// CSV of median validation losses and their difference, positive when
    /// the diffusion run is ahead.
    pub fn difference_csv(&self) -> String {
        let mut out = String::from("iter,loss_standard_median,loss_diffusion_median,difference\n");
        for m in &self.medians {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e}\n",
                m.iter, m.val_standard, m.val_diffusion, m.val_difference
            ));
        }
        out
    }

    /// Median (standard - diffusion) validation loss at the final record.
    pub fn final_val_difference_median(&self) -> Option<f64> {
        self.medians.last().map(|m| m.val_difference)
    }
}

/// Deterministic lowercase word-salad text for tests and demos: sentences of
/// common words with periods and newlines, about 23 distinct characters.
pub fn synthetic_corpus(min_bytes: usize, seed: u64) -> String {
    const WORDS: &[&str] = &[
        "the", "of", "and", "to", "in", "stone", "river", "light", "wind", "tower", "night",
        "morning", "keeper", "letter", "garden", "winter", "lantern", "harbor", "story", "silver",
        "old", "small", "quiet", "far",
    ];
    let mut rng = SplitMix64::new(derive_seed(seed, TAG_CORPUS));
    let mut out = String::with_capacity(min_bytes + 80);
    let mut sentences = 0;
    while out.len() < min_bytes {
        let len = 4 + rng.next_below(7) as usize;
        for w in 0..len {
            if w > 0 {
                out.push(' ');
            }
            out.push_str(WORDS[rng.next_below(WORDS.len() as u64) as usize]);
        }
        out.push('.');
        sentences += 1;
        if sentences % 6 == 0 {
            out.push('\n');
        } else {
            out.push(' ');
        }
    }
    out
}
