//! Acceptance gate: one test per release criterion. Each test prints a
//! `PASS:` line on success (visible with `--nocapture`); a failing
//! criterion fails its test.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use asr_core::alphabet::{Alphabet, ALPHABET_SIZE, BLANK};
use asr_core::audio::{write_wav, Utterance};
use asr_core::augment::{compute_snr, mix_noise, NoiseClip};
use asr_core::ctc::{brute_force_ctc, ctc_loss, LabelSequence};
use asr_core::decoder::{
    beam_search, char_edits, exhaustive_decode, greedy_decode, DecoderConfig,
};
use asr_core::lm::{train_ngram, LmTrainConfig, NGramModel, Smoothing};
use asr_core::network::{
    backward, forward, forward_backward_timesplit, init_params, ForwardMode, NetworkConfig,
    NetworkParams,
};
use asr_core::pipeline::{
    extract_features, run_evaluate, run_train, FeatureSettings, NormalizationMode, PipelineConfig,
};
use asr_core::training::{
    data_parallel_step, make_minibatches, train_epoch, OptimizerState, TrainConfig,
    TrainingExample,
};
use asr_core::PosteriorGrid;

fn random_grid(rng: &mut ChaCha8Rng, t: usize, support: &[usize]) -> PosteriorGrid {
    let mut probs = Array2::zeros((t, ALPHABET_SIZE));
    for row in 0..t {
        let raw: Vec<f64> = support.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for (i, &k) in support.iter().enumerate() {
            probs[[row, k]] = raw[i] / total;
        }
    }
    PosteriorGrid::from_probs(probs)
}

fn random_label(rng: &mut ChaCha8Rng, letters: &[usize], max_len: usize) -> LabelSequence {
    let len = rng.random_range(0..=max_len);
    let indices: Vec<usize> = (0..len)
        .map(|_| letters[rng.random_range(0..letters.len())])
        .collect();
    LabelSequence::from_indices(indices).unwrap()
}

fn check_one(grid: &PosteriorGrid, label: &LabelSequence) {
    let oracle = brute_force_ctc(grid, label).unwrap();
    let res = ctc_loss(grid, label);
    if oracle.is_infinite() {
        assert!(res.loss.is_infinite(), "oracle inf, forward-backward {}", res.loss);
    } else {
        let tol = 1e-10 * oracle.abs().max(1.0);
        assert!(
            (res.loss - oracle).abs() <= tol,
            "forward-backward {} vs oracle {}",
            res.loss,
            oracle
        );
    }
}

#[test]
fn ctc_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0usize;

    // restricted alphabets (<= 4 symbols incl. blank), T' up to 8
    for trial in 0..187 {
        let letters = match trial % 3 {
            0 => vec![0],
            1 => vec![0, 1],
            _ => vec![0, 1, 2],
        };
        let mut support = letters.clone();
        support.push(BLANK);
        let t = rng.random_range(1..=8);
        let grid = random_grid(&mut rng, t, &support);
        let label = random_label(&mut rng, &letters, 4);
        check_one(&grid, &label);
        checked += 1;
    }

    // full alphabet, short grids
    let full: Vec<usize> = (0..ALPHABET_SIZE).collect();
    let letters: Vec<usize> = (0..5).collect();
    for _ in 0..10 {
        let t = rng.random_range(1..=4);
        let grid = random_grid(&mut rng, t, &full);
        let label = random_label(&mut rng, &letters, 3);
        check_one(&grid, &label);
        checked += 1;
    }
    for _ in 0..3 {
        let grid = random_grid(&mut rng, 5, &full);
        let label = random_label(&mut rng, &letters, 3);
        check_one(&grid, &label);
        checked += 1;
    }

    assert!(checked >= 200);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s");
    println!("PASS: CTC forward-backward matches the path-enumeration oracle within 1e-10 on {checked} instances ({elapsed:.1}s)");
}

#[test]
fn ctc_gradient_matches_finite_differences() {
    let started = Instant::now();
    let config = NetworkConfig {
        context: 1,
        stride: 1,
        hidden: [8, 7, 8, 6, 8],
        input_dim: 5,
        dropout_rate: 0.0,
        dropout_layer5: false,
    };
    let params = init_params(&config, 300).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let frames = Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
    let label = LabelSequence::from_text("ab").unwrap();

    let loss_of = |p: &NetworkParams| -> f64 {
        let (grid, _) = forward(&config, p, frames.view(), ForwardMode::Eval, 0).unwrap();
        ctc_loss(&grid, &label).loss
    };
    let (grid, cache) = forward(&config, &params, frames.view(), ForwardMode::Eval, 0).unwrap();
    let ctc = ctc_loss(&grid, &label);
    assert!(ctc.feasible);
    let grads = backward(&params, &cache, ctc.dl_dlogits.view()).unwrap();

    let eps = 1e-5;
    let mut max_rel = 0.0f64;
    let mut n_params = 0usize;
    for ti in 0..14 {
        for i in 0..params.tensors()[ti].len() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][i] += eps;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][i] -= eps;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            let an = grads.tensors()[ti][i];
            let denom = fd.abs().max(an.abs()).max(1e-8);
            max_rel = max_rel.max((fd - an).abs() / denom);
            n_params += 1;
        }
    }
    assert!(max_rel < 1e-5, "max relative error {max_rel}");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "took {elapsed:.1}s");
    println!("PASS: CTC gradient matches central finite differences over all {n_params} parameters (max rel err {max_rel:.2e}, {elapsed:.1}s)");
}

#[test]
fn parallelism_equivalence() {
    let started = Instant::now();
    let config = NetworkConfig {
        context: 1,
        stride: 2,
        hidden: [6, 5, 6, 5, 6],
        input_dim: 4,
        dropout_rate: 0.0,
        dropout_layer5: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(400);

    // (a) time-split forward/backward against the sequential path
    for trial in 0..100 {
        let params = init_params(&config, 400 + trial).unwrap();
        let t = rng.random_range(4..=12);
        let frames = Array2::from_shape_fn((t, 4), |_| rng.random_range(-1.0..1.0));
        let tp = config.output_steps(t);
        let upstream = Array2::from_shape_fn((tp, ALPHABET_SIZE), |_| rng.random_range(-1.0..1.0));

        let (grid, cache) = forward(&config, &params, frames.view(), ForwardMode::Eval, 0).unwrap();
        let seq_grads = backward(&params, &cache, upstream.view()).unwrap();
        let split =
            forward_backward_timesplit(&config, &params, frames.view(), upstream.view()).unwrap();

        let post_diff = (&split.posteriors.probs - &grid.probs)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(post_diff < 1e-10, "trial {trial}: posterior diff {post_diff}");
        let grad_diff = split.grads.max_abs_diff(&seq_grads);
        assert!(grad_diff < 1e-10, "trial {trial}: grad diff {grad_diff}");
    }

    // (b) multi-worker data-parallel step against the single-worker step
    let dataset: Vec<TrainingExample> = (0..8)
        .map(|i| {
            let t = 6 + (i % 3) * 2;
            TrainingExample {
                utterance_id: format!("u{i}"),
                frames: Array2::from_shape_fn((t, 4), |_| rng.random_range(-1.0..1.0)),
                label: LabelSequence::from_text(if i % 2 == 0 { "ab" } else { "b" }).unwrap(),
            }
        })
        .collect();
    let batch = make_minibatches(&dataset, 8, 0).unwrap().remove(0);
    let base = init_params(&config, 500).unwrap();
    let mut reference: Option<NetworkParams> = None;
    for workers in [1usize, 2, 4] {
        let mut params = base.clone();
        let mut state = OptimizerState::new(&config, 0.01).unwrap();
        data_parallel_step(&mut params, &mut state, &config, &batch, workers, 9).unwrap();
        match &reference {
            None => reference = Some(params),
            Some(r) => {
                let diff = params.max_abs_diff(r);
                assert!(diff < 1e-10, "{workers} workers diverge by {diff}");
            }
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s");
    println!("PASS: time-split and 2/4-worker data-parallel execution match the sequential path within 1e-10 ({elapsed:.1}s)");
}

#[test]
fn decoder_oracle_equivalence() {
    let started = Instant::now();
    let corpus = ["ab a", "a ab", "b ab a", "ab ab", "a b", "b a b"];
    let lm_config = LmTrainConfig {
        order: 2,
        vocab_cap: 100,
        min_char_coverage: 0.9,
        smoothing: Smoothing::InterpolatedKneserNey,
    };
    let lm = train_ngram(corpus.iter().copied(), &lm_config).unwrap();

    let a = Alphabet.index_of('a').unwrap();
    let b = Alphabet.index_of('b').unwrap();
    let space = Alphabet.index_of(' ').unwrap();
    let support = [a, b, space, BLANK];

    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let mut config = DecoderConfig {
        alpha: 0.0,
        beta: 0.0,
        beam_width: 10_000,
        prune_threshold: 0.0,
    };
    let mut checked = 0usize;
    for trial in 0..100 {
        let t = 1 + trial % 4;
        let grid = random_grid(&mut rng, t, &support);
        for (alpha, beta) in [(0.0, 0.0), (1.0, 0.0), (0.0, 0.5), (1.0, 0.5)] {
            config.alpha = alpha;
            config.beta = beta;
            let (bs_text, bs_score) = beam_search(&grid, &lm, &config).unwrap();
            let (ex_text, ex_score) = exhaustive_decode(&grid, &lm, alpha, beta).unwrap();
            assert_eq!(bs_text, ex_text, "trial {trial} alpha={alpha} beta={beta}");
            assert!(
                (bs_score - ex_score).abs() < 1e-9,
                "trial {trial}: {bs_score} vs {ex_score}"
            );
        }
        checked += 1;
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s");
    println!("PASS: saturating beam search equals exhaustive decoding on {checked} grids x 4 (alpha, beta) settings ({elapsed:.1}s)");
}

#[test]
fn lm_normalization_and_arpa_roundtrip() {
    let subjects = [
        "the cat", "a dog", "the bird", "one fish", "my friend", "her horse", "his crow",
    ];
    let verbs = [
        "sees", "likes", "finds", "follows", "hears", "watches", "feeds", "knows",
    ];
    let objects = ["the river", "a tree", "the house", "some food", "its home"];
    let mut corpus = Vec::new();
    for (i, s) in subjects.iter().enumerate() {
        for (j, v) in verbs.iter().enumerate() {
            let o = objects[(i + j) % objects.len()];
            corpus.push(format!("{s} {v} {o}"));
        }
    }
    assert!(corpus.len() >= 50);

    let config = LmTrainConfig {
        order: 3,
        vocab_cap: 1000,
        min_char_coverage: 0.9,
        smoothing: Smoothing::InterpolatedKneserNey,
    };
    let lm = train_ngram(corpus.iter().map(String::as_str), &config).unwrap();

    let vocab: Vec<&str> = lm.vocabulary().words().collect();
    let predictable: Vec<String> = lm.predictable_tokens().map(str::to_owned).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut contexts = 0usize;
    for _ in 0..110 {
        let len = rng.random_range(0..=2);
        let context: Vec<&str> = (0..len)
            .map(|_| {
                if rng.random_range(0..10) == 0 {
                    "<s>"
                } else {
                    vocab[rng.random_range(0..vocab.len())]
                }
            })
            .collect();
        let sum: f64 = predictable
            .iter()
            .map(|w| 10f64.powf(lm.score_word(&context, w)))
            .sum();
        assert!(
            (sum - 1.0).abs() < 1e-6,
            "context {context:?} sums to {sum}"
        );
        contexts += 1;
    }

    let mut arpa = Vec::new();
    lm.save_arpa(&mut arpa).unwrap();
    let reloaded = NGramModel::load_arpa(arpa.as_slice()).unwrap();
    let mut arpa2 = Vec::new();
    reloaded.save_arpa(&mut arpa2).unwrap();
    assert_eq!(arpa, arpa2, "ARPA round trip not byte-stable");
    for _ in 0..100 {
        let len = rng.random_range(0..=2);
        let context: Vec<&str> = (0..len)
            .map(|_| vocab[rng.random_range(0..vocab.len())])
            .collect();
        let w = vocab[rng.random_range(0..vocab.len())];
        let d = (lm.score_word(&context, w) - reloaded.score_word(&context, w)).abs();
        assert!(d < 1e-6, "roundtrip drift {d} on {context:?} -> {w}");
    }
    println!("PASS: 3-gram sums to 1 +/- 1e-6 over {contexts} contexts ({} phrases) and survives an ARPA round trip to 1e-6", corpus.len());
}

#[test]
fn snr_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    let mut max_err = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(400..1200);
        let signal: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        let clip_len = rng.random_range(n / 2..n);
        let clip = NoiseClip {
            samples: (0..clip_len).map(|_| rng.random_range(-0.2..0.2)).collect(),
            sample_rate_hz: 16_000,
            source_id: format!("n{case}"),
        };
        let clean = Utterance::new(signal, 16_000, "x", format!("u{case}"));
        let target = rng.random_range(0.0..20.0);
        let mixed = mix_noise(&clean, &[clip], target, case as u64).unwrap();
        assert!(!mixed.flagged, "case {case} clipped");
        let achieved = compute_snr(&clean, &mixed.applied_noise).unwrap();
        let err = (achieved - target).abs();
        assert!(err < 0.01, "case {case}: target {target} achieved {achieved}");
        max_err = max_err.max(err);
    }
    println!("PASS: mixed noise hits targets across 0-20 dB within 0.01 dB on 100 cases (max err {max_err:.2e} dB)");
}

const TONE_RATE: u32 = 8000;

fn tone_utterance(rng: &mut ChaCha8Rng, transcript: &str, id: &str) -> Utterance {
    let freq_of = |c: char| match c {
        'a' => 400.0,
        'b' => 900.0,
        'c' => 1700.0,
        'd' => 2600.0,
        _ => 50.0,
    };
    let char_samples = (TONE_RATE as f64 * 0.12) as usize;
    let pad = (TONE_RATE as f64 * 0.05) as usize;
    let mut samples = vec![0.0f64; pad];
    for ch in transcript.chars() {
        let f = freq_of(ch);
        for i in 0..char_samples {
            let t = i as f64 / TONE_RATE as f64;
            samples.push(0.4 * (2.0 * std::f64::consts::PI * f * t).sin());
        }
    }
    samples.extend(std::iter::repeat_n(0.0, pad));
    // a small dither keeps the log features finite in the silent spans
    for s in samples.iter_mut() {
        *s += rng.random_range(-1e-4..1e-4);
    }
    Utterance::new(samples, TONE_RATE, transcript, id)
}

#[test]
fn end_to_end_overfit() {
    let started = Instant::now();
    let transcripts = ["ab", "ba", "ca", "ac", "bc", "cb", "abc", "bca", "cab", "dba"];
    let feat = FeatureSettings {
        sample_rate_hz: TONE_RATE,
        window_ms: 20.0,
        hop_ms: 10.0,
        n_banks: 12,
        normalization: NormalizationMode::PerUtterance,
    };
    let config = NetworkConfig {
        context: 5,
        stride: 2,
        hidden: [32, 32, 32, 32, 32],
        input_dim: 13,
        dropout_rate: 0.0,
        dropout_layer5: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let utterances: Vec<Utterance> = transcripts
        .iter()
        .enumerate()
        .map(|(i, t)| tone_utterance(&mut rng, t, &format!("tone-{i}")))
        .collect();
    let dataset: Vec<TrainingExample> = utterances
        .iter()
        .map(|u| TrainingExample {
            utterance_id: u.utterance_id.clone(),
            frames: extract_features(u, &feat, None).unwrap(),
            label: LabelSequence::from_text(&u.transcript).unwrap(),
        })
        .collect();

    let mut params = init_params(&config, 900).unwrap();
    let mut state = OptimizerState::new(&config, 0.0001).unwrap();
    state.momentum = 0.99;
    state.anneal_factor = 1.0;
    let tc = TrainConfig {
        network: config.clone(),
        batch_size: 2,
        n_workers: 1,
        base_seed: 900,
    };

    let score = |params: &NetworkParams| -> (f64, usize) {
        let mut edits = 0usize;
        let mut chars = 0usize;
        let mut exact = 0usize;
        for (example, reference) in dataset.iter().zip(&transcripts) {
            let (grid, _) =
                forward(&config, params, example.frames.view(), ForwardMode::Eval, 0).unwrap();
            let hyp = greedy_decode(&grid);
            let counts = char_edits(reference, &hyp);
            edits += counts.edits;
            chars += counts.reference_len;
            if hyp == *reference {
                exact += 1;
            }
        }
        (edits as f64 / chars as f64, exact)
    };

    let mut cer = f64::INFINITY;
    let mut exact = 0usize;
    let mut epochs = 0usize;
    for epoch in 0..500 {
        train_epoch(&mut params, &mut state, &dataset, &tc).unwrap();
        epochs = epoch + 1;
        if (epoch + 1) % 5 == 0 {
            let (c, e) = score(&params);
            cer = c;
            exact = e;
            if cer < 0.05 && exact >= 8 {
                break;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(cer < 0.05, "CER {cer:.3} after {epochs} epochs");
    assert!(exact >= 8, "only {exact}/10 exact after {epochs} epochs");
    assert!(elapsed < 600.0, "took {elapsed:.1}s");
    println!("PASS: 10-utterance overfit reached CER {:.1}% with {exact}/10 exact greedy decodes in {epochs} epochs ({elapsed:.1}s)", cer * 100.0);
}

#[test]
fn language_model_corrects_greedy_misspelling() {
    let mut corpus: Vec<String> = Vec::new();
    for _ in 0..20 {
        corpus.push("what is the weather like in boston".to_owned());
        corpus.push("boston weather today".to_owned());
    }
    corpus.push("the weather is fine".to_owned());
    let lm_config = LmTrainConfig {
        order: 2,
        vocab_cap: 100,
        min_char_coverage: 0.95,
        smoothing: Smoothing::InterpolatedKneserNey,
    };
    let lm = train_ngram(corpus.iter().map(String::as_str), &lm_config).unwrap();

    let word = "bostin";
    let mut probs = Array2::zeros((word.len(), ALPHABET_SIZE));
    for (t, c) in word.chars().enumerate() {
        probs[[t, Alphabet.index_of(c).unwrap()]] = 1.0;
    }
    let i = Alphabet.index_of('i').unwrap();
    let o = Alphabet.index_of('o').unwrap();
    probs[[4, i]] = 0.6;
    probs[[4, o]] = 0.4;
    let grid = PosteriorGrid::from_probs(probs);

    assert_eq!(greedy_decode(&grid), "bostin");
    let config = DecoderConfig {
        alpha: 1.0,
        beta: 0.0,
        beam_width: 200,
        prune_threshold: 0.0,
    };
    let (text, _) = beam_search(&grid, &lm, &config).unwrap();
    assert_eq!(text, "boston");
    println!("PASS: greedy decoding reads \"bostin\"; beam search with the language model corrects it to \"boston\"");
}

#[test]
fn determinism_of_training_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig::default();
    config.feature.sample_rate_hz = TONE_RATE;
    config.feature.n_banks = 6;
    config.network.input_dim = 7;
    config.network.context = 2;
    config.network.hidden = [8, 8, 8, 8, 8];
    config.network.dropout_rate = 0.05;
    config.training.batch_size = 2;
    config.training.epochs = 3;
    config.training.n_workers = 2;
    config.training.seed = 12;
    config.lm.order = 2;
    config.paths.train_manifest = dir.path().join("train.tsv");
    config.paths.eval_manifest = dir.path().join("train.tsv");
    config.paths.lm_corpus = dir.path().join("corpus.txt");
    config.paths.checkpoint = dir.path().join("model.ckpt");
    config.paths.stats = dir.path().join("stats.txt");
    config.paths.lm = dir.path().join("model.arpa");
    config.paths.metrics = dir.path().join("metrics.jsonl");
    config.paths.report = dir.path().join("report.json");
    config.paths.output_dir = dir.path().join("out");
    config.validate().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(950);
    let mut manifest = String::new();
    for (i, t) in ["ab", "ba", "abc", "cb"].iter().enumerate() {
        let utt = tone_utterance(&mut rng, t, &format!("d{i}"));
        let path = dir.path().join(format!("d{i}.wav"));
        write_wav(&path, &utt.samples, TONE_RATE).unwrap();
        manifest.push_str(&format!("{}\t{}\tspk{}\n", path.display(), t, i % 2));
    }
    std::fs::write(&config.paths.train_manifest, manifest).unwrap();
    std::fs::write(&config.paths.lm_corpus, "ab ba\nabc cb\nab abc\n").unwrap();

    run_train(&config).unwrap();
    let first_checkpoint = std::fs::read(&config.paths.checkpoint).unwrap();
    run_train(&config).unwrap();
    let second_checkpoint = std::fs::read(&config.paths.checkpoint).unwrap();
    assert_eq!(first_checkpoint, second_checkpoint, "checkpoints differ");

    asr_core::pipeline::run_lm_train(&config).unwrap();
    run_evaluate(&config, false).unwrap();
    let first_report = std::fs::read(&config.paths.report).unwrap();
    run_evaluate(&config, false).unwrap();
    let second_report = std::fs::read(&config.paths.report).unwrap();
    assert_eq!(first_report, second_report, "reports differ");

    println!("PASS: repeated (config, seed) runs give bit-identical checkpoints and byte-identical evaluation reports");
}
