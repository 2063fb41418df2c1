use lapformer_core::block::AttentionMode;
use lapformer_core::lm::{synthetic_corpus, sample_batch, lm_forward, lm_backward, cross_entropy, Split, CharVocab, LmConfig, GptParams};
use std::time::Instant;

fn main() {
    let corpus = synthetic_corpus(120_000, 42);
    let vocab = CharVocab::new(&corpus).unwrap();
    let mut cfg = LmConfig::desk_scale(AttentionMode::Diffusion, 1);
    cfg.vocab_size = vocab.vocab_size();
    let tokens = vocab.encode(&corpus).unwrap();
    let params = GptParams::init(&cfg).unwrap();
    let batch = sample_batch(&tokens, cfg.block_size, 32, 1, Split::Train, 0).unwrap();

    // warm
    let (logits, cache) = lm_forward(&params, &cfg, &batch.inputs, 32, 64, None).unwrap();
    let _ = cross_entropy(&logits, &batch.targets).unwrap();
    let _ = lm_backward(&params, &cfg, &cache, &batch.targets).unwrap();

    let n = 10;
    let t = Instant::now();
    for _ in 0..n {
        let (l, _c) = lm_forward(&params, &cfg, &batch.inputs, 32, 64, None).unwrap();
        std::hint::black_box(&l);
    }
    let fwd = t.elapsed().as_secs_f64() / n as f64;

    let t = Instant::now();
    for _ in 0..n {
        let g = lm_backward(&params, &cfg, &cache, &batch.targets).unwrap();
        std::hint::black_box(&g);
    }
    let bwd = t.elapsed().as_secs_f64() / n as f64;
    println!("forward {:.1} ms, backward {:.1} ms, total {:.1} ms", fwd*1e3, bwd*1e3, (fwd+bwd)*1e3);
}
