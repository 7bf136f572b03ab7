//! Criterion benchmarks for the hot paths: network forward pass, CTC
//! loss with gradients, and LM-fused beam-search decoding.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use asr_core::ctc::{ctc_loss, LabelSequence};
use asr_core::decoder::{beam_search, DecoderConfig};
use asr_core::lm::{train_ngram, LmTrainConfig, NGramModel};
use asr_core::network::{forward, init_params, ForwardMode, NetworkConfig};
use asr_core::PosteriorGrid;

const ALPHABET_SIZE: usize = 29;

fn random_grid(t: usize, seed: u64) -> PosteriorGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Array2::from_shape_fn((t, ALPHABET_SIZE), |_| rng.random_range(0.01..1.0f64));
    for mut row in probs.rows_mut() {
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    PosteriorGrid::from_probs(probs)
}

fn toy_lm() -> NGramModel {
    let corpus = [
        "what is the weather like in boston",
        "the weather in boston is fine",
        "what is the news today",
        "boston weather is like this",
    ];
    let mut config = LmTrainConfig::new(3);
    config.vocab_cap = 100;
    train_ngram(corpus.iter().copied(), &config).unwrap()
}

fn bench_forward(c: &mut Criterion) {
    let config = NetworkConfig {
        context: 5,
        stride: 2,
        hidden: [128, 128, 128, 128, 128],
        input_dim: 21,
        dropout_rate: 0.0,
        dropout_layer5: false,
    };
    let params = init_params(&config, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames = Array2::from_shape_fn((200, 21), |_| rng.random_range(-1.0..1.0f64));
    c.bench_function("forward_200_frames", |b| {
        b.iter(|| forward(&config, &params, black_box(frames.view()), ForwardMode::Eval, 0))
    });
}

fn bench_ctc(c: &mut Criterion) {
    let grid = random_grid(200, 3);
    let label = LabelSequence::from_text("the weather in boston is fine today").unwrap();
    c.bench_function("ctc_loss_200_frames", |b| {
        b.iter(|| ctc_loss(black_box(&grid), black_box(&label)))
    });
}

fn bench_beam_search(c: &mut Criterion) {
    let grid = random_grid(100, 4);
    let lm = toy_lm();
    let config = DecoderConfig {
        beam_width: 200,
        ..DecoderConfig::default()
    };
    c.bench_function("beam_search_100_frames_beam_200", |b| {
        b.iter(|| beam_search(black_box(&grid), &lm, &config))
    });
}

criterion_group!(benches, bench_forward, bench_ctc, bench_beam_search);
criterion_main!(benches);
