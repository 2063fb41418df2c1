use lapformer_core::block::AttentionMode;
use lapformer_core::lm::{synthetic_corpus, train, LmConfig, TrainConfig};
use std::time::Instant;

fn main() {
    let corpus = synthetic_corpus(120_000, 42);
    println!("corpus bytes: {}", corpus.len());
    let lm = LmConfig::desk_scale(AttentionMode::Diffusion, 1);
    let tc = TrainConfig {
        max_iters: 60,
        eval_interval: 30,
        eval_iters: 5,
        ..Default::default()
    };
    let t = Instant::now();
    let run = train(&lm, &tc, &corpus).unwrap();
    let dt = t.elapsed().as_secs_f64();
    println!("60 iters in {dt:.2}s  ({:.1} ms/iter incl eval)", dt * 1000.0 / 60.0);
    for r in &run.records {
        println!("iter {:4}  train {:.4}  val {:.4}", r.iter, r.train_loss, r.val_loss);
    }
    let per_iter = dt / 60.0;
    println!("projected 2000-iter run: {:.1} min", per_iter * 2000.0 / 60.0);
    println!("vocab={}, ln(V)={:.3}", run.lm_config.vocab_size, (run.lm_config.vocab_size as f64).ln());
}
