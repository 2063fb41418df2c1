//! Deterministic batch sampling. The first `split_fraction` of the token
//! stream is the train region, the rest the val region; a batch is
//! `batch_size` random contiguous windows whose start offsets come from a
//! stream seeded per `(seed, split, step)`, so the same triple always yields
//! the same batch and val windows can never touch the train region.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

const TAG_TRAIN: u64 = 0x747261696e; // "train"
const TAG_VAL: u64 = 0x76616c; // "val"

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => TAG_TRAIN,
            Split::Val => TAG_VAL,
        }
    }
}

/// `batch_size` windows of `seq_len` inputs with next-token targets,
/// flattened row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub batch_size: usize,
    pub seq_len: usize,
}

/// Splits tokens into train/val regions at `fraction` (train first).
pub fn split_tokens(tokens: &[usize], fraction: f64) -> Result<(&[usize], &[usize])> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::invalid_parameter(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let cut = ((tokens.len() as f64) * fraction).floor() as usize;
    Ok(tokens.split_at(cut))
}

/// Samples one batch of contiguous windows from a token region. Window
/// starts are drawn from `SplitMix64(derive(derive(seed, split), step))`.
pub fn sample_batch(
    region: &[usize],
    block_size: usize,
    batch_size: usize,
    seed: u64,
    split: Split,
    step: u64,
) -> Result<Batch> {
    if block_size == 0 || batch_size == 0 {
        return Err(Error::invalid_parameter(
            "sample_batch: block_size and batch_size must be at least 1",
        ));
    }
    if region.len() <= block_size + 1 {
        return Err(Error::invalid_input(format!(
            "sample_batch: region has {} tokens, need more than {}",
            region.len(),
            block_size + 1
        )));
    }
    let max_start = region.len() - block_size - 1;
    let mut rng = SplitMix64::new(derive_seed(derive_seed(seed, split.tag()), step));
    let mut inputs = Vec::with_capacity(batch_size * block_size);
    let mut targets = Vec::with_capacity(batch_size * block_size);
    for _ in 0..batch_size {
        let start = rng.next_below(max_start as u64 + 1) as usize;
        inputs.extend_from_slice(&region[start..start + block_size]);
        targets.extend_from_slice(&region[start + 1..start + block_size + 1]);
    }
    Ok(Batch {
        inputs,
        targets,
        batch_size,
        seq_len: block_size,
    })
}
