use criterion::{criterion_group, criterion_main, Criterion};

use lapformer_core::block::AttentionMode;
use lapformer_core::lm::{
    cross_entropy, lm_backward, lm_forward, sample_batch, synthetic_corpus, CharVocab, GptParams,
    LmConfig, Split,
};

fn bench_train_step(c: &mut Criterion) {
    let corpus = synthetic_corpus(60_000, 1);
    let vocab = CharVocab::new(&corpus).unwrap();
    let mut cfg = LmConfig::desk_scale(AttentionMode::Diffusion, 1);
    cfg.vocab_size = vocab.vocab_size();
    let tokens = vocab.encode(&corpus).unwrap();
    let params = GptParams::init(&cfg).unwrap();
    let batch = sample_batch(&tokens, cfg.block_size, 32, 1, Split::Train, 0).unwrap();

    c.bench_function("lm_forward_desk_scale", |bench| {
        bench.iter(|| {
            lm_forward(&params, &cfg, &batch.inputs, batch.batch_size, batch.seq_len, None)
                .unwrap()
        })
    });

    let (logits, cache) =
        lm_forward(&params, &cfg, &batch.inputs, batch.batch_size, batch.seq_len, None).unwrap();
    let _ = cross_entropy(&logits, &batch.targets).unwrap();
    c.bench_function("lm_backward_desk_scale", |bench| {
        bench.iter(|| lm_backward(&params, &cfg, &cache, &batch.targets).unwrap())
    });
}

criterion_group! {
    name = lm;
    config = Criterion::default().sample_size(10);
    targets = bench_train_step
}
criterion_main!(lm);
