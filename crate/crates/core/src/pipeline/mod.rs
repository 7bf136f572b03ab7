//! Orchestration: configuration, manifest ingestion, and the end-to-end
//! subcommands (stats, train, augment, lm-train, decode, evaluate),
//! including jittered ensemble decoding.

mod config;
mod manifest;

pub use config::{
    AugmentSettings, FeatureSettings, NormalizationMode, PipelineConfig, PipelinePaths,
    TrainingSettings,
};
pub use manifest::{ingest_manifest, load_utterance, Manifest, ManifestEntry, RejectedLine};

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, Utterance};
use crate::augment::{
    accept_noise_clip, band_power_profile, draw_target_snr, jitter_translate, mix_noise,
    NoiseClip, DEFAULT_BAND_COUNT,
};
use crate::ctc::LabelSequence;
use crate::decoder::{beam_search, cer, corpus_wer, greedy_decode, wer, DecoderConfig, Rate};
use crate::error::{Error, Result};
use crate::features::{
    apply_global_stats, compute_global_stats, frame_spectrogram, normalize_audio_power,
    normalize_per_utterance, GlobalFeatureStats,
};
use crate::lm::{train_ngram, NGramModel};
use crate::network::{
    forward, init_params, load_checkpoint, save_checkpoint, softmax_rows, ForwardMode,
    NetworkConfig, NetworkParams, PosteriorGrid,
};
use crate::training::{train_epoch, OptimizerState, TrainConfig, TrainingExample};

/// Extract features for one utterance under the configured scheme.
/// Global normalization needs previously computed corpus statistics.
pub fn extract_features(
    utt: &Utterance,
    feat: &FeatureSettings,
    stats: Option<&GlobalFeatureStats>,
) -> Result<Array2<f64>> {
    let utt = if feat.normalization == NormalizationMode::AudioPower {
        normalize_audio_power(utt.clone())?
    } else {
        utt.clone()
    };
    let raw = frame_spectrogram(&utt, feat.window_ms, feat.hop_ms, feat.n_banks)?;
    let fs = match feat.normalization {
        NormalizationMode::PerUtterance => normalize_per_utterance(raw)?,
        NormalizationMode::Global => {
            let stats = stats.ok_or_else(|| {
                Error::BadConfig("global normalization requires a stats file".into())
            })?;
            apply_global_stats(raw, stats)?
        }
        // per-speaker normalization happens at the batch level; treat
        // single-utterance extraction like the raw path
        NormalizationMode::AudioPower | NormalizationMode::PerSpeaker | NormalizationMode::None => {
            raw
        }
    };
    Ok(fs.frames)
}

fn posterior_grid(
    config: &NetworkConfig,
    params: &NetworkParams,
    frames: &Array2<f64>,
) -> Result<PosteriorGrid> {
    let (grid, _) = forward(config, params, frames.view(), ForwardMode::Eval, 0)?;
    Ok(grid)
}

/// Average several posterior grids frame-wise and renormalize each row.
/// With `log_space` the average runs over log probabilities instead
/// (geometric mean), kept for comparison only.
pub fn average_grids(grids: &[PosteriorGrid], log_space: bool) -> Result<PosteriorGrid> {
    let first = grids.first().ok_or_else(|| Error::NoData("no grids to average".into()))?;
    let shape = first.probs.dim();
    for g in grids {
        if g.probs.dim() != shape {
            return Err(Error::Alignment(format!(
                "posterior grids disagree: {:?} vs {:?}",
                shape,
                g.probs.dim()
            )));
        }
    }
    let averaged = if log_space {
        let mut acc = Array2::zeros(shape);
        for g in grids {
            acc += &g.log_probs;
        }
        acc /= grids.len() as f64;
        softmax_rows(&acc)
    } else {
        let mut acc = Array2::zeros(shape);
        for g in grids {
            acc += &g.probs;
        }
        acc /= grids.len() as f64;
        // renormalize rows; averaging already preserves row sums but the
        // division keeps the invariant exact under accumulation error
        for mut row in acc.rows_mut() {
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        acc
    };
    Ok(PosteriorGrid::from_probs(averaged))
}

/// Decode one utterance with a model ensemble, optionally averaging over
/// the three half-hop jitter variants of the audio.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_decode(
    models: &[(NetworkConfig, NetworkParams)],
    utt: &Utterance,
    feat: &FeatureSettings,
    jitter: bool,
    jitter_ms: f64,
    lm: &NGramModel,
    dconf: &DecoderConfig,
    log_space: bool,
) -> Result<(String, f64)> {
    if models.is_empty() {
        return Err(Error::NoData("empty model ensemble".into()));
    }
    let shifts: Vec<f64> = if jitter {
        vec![-jitter_ms, 0.0, jitter_ms]
    } else {
        vec![0.0]
    };
    let mut grids = Vec::with_capacity(models.len() * shifts.len());
    for &shift in &shifts {
        let variant = if shift == 0.0 {
            utt.clone()
        } else {
            jitter_translate(utt, shift)?
        };
        for (config, params) in models {
            let frames = extract_features(&variant, feat, None)?;
            grids.push(posterior_grid(config, params, &frames)?);
        }
    }
    let averaged = average_grids(&grids, log_space)?;
    beam_search(&averaged, lm, dconf)
}

/// Compute corpus feature statistics over the training manifest and save
/// them in the text stats format.
pub fn run_stats(config: &PipelineConfig) -> Result<GlobalFeatureStats> {
    let manifest = ingest_manifest(&config.paths.train_manifest)?;
    let mut sequences = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let utt = load_utterance(entry)?;
        sequences.push(frame_spectrogram(
            &utt,
            config.feature.window_ms,
            config.feature.hop_ms,
            config.feature.n_banks,
        )?);
    }
    let stats = compute_global_stats(sequences.iter()).map_err(|e| e.in_module("features"))?;
    let mut sink = BufWriter::new(File::create(&config.paths.stats)?);
    stats.save(&mut sink)?;
    Ok(stats)
}

fn load_stats_if_needed(config: &PipelineConfig) -> Result<Option<GlobalFeatureStats>> {
    if config.feature.normalization != NormalizationMode::Global {
        return Ok(None);
    }
    let mut source = BufReader::new(File::open(&config.paths.stats)?);
    let stats = GlobalFeatureStats::load(&mut source)?;
    if stats.dim() != config.feature.feature_dim() {
        return Err(Error::BadConfig(format!(
            "stats file has dim {}, config expects {}",
            stats.dim(),
            config.feature.feature_dim()
        )));
    }
    Ok(stats.into())
}

fn build_dataset(
    config: &PipelineConfig,
    manifest: &Manifest,
    stats: Option<&GlobalFeatureStats>,
) -> Result<Vec<TrainingExample>> {
    let mut dataset = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let utt = load_utterance(entry)?;
        let frames = extract_features(&utt, &config.feature, stats)?;
        dataset.push(TrainingExample {
            utterance_id: entry.utterance_id.clone(),
            frames,
            label: LabelSequence::from_text(&entry.transcript)?,
        });
    }
    Ok(dataset)
}

/// Train from the manifest and write the final checkpoint; per-epoch
/// metrics go to the metrics file as JSON lines.
pub fn run_train(config: &PipelineConfig) -> Result<NetworkParams> {
    config.validate()?;
    let stats = load_stats_if_needed(config)?;
    let manifest = ingest_manifest(&config.paths.train_manifest)?;
    let dataset = build_dataset(config, &manifest, stats.as_ref())?;

    let mut params = init_params(&config.network, config.training.seed)?;
    let mut state = OptimizerState::new(&config.network, config.training.learning_rate)?;
    state.momentum = config.training.momentum;
    state.anneal_factor = config.training.anneal_factor;
    let tc = TrainConfig {
        network: config.network.clone(),
        batch_size: config.training.batch_size,
        n_workers: config.training.n_workers,
        base_seed: config.training.seed,
    };

    let mut metrics_sink = BufWriter::new(File::create(&config.paths.metrics)?);
    for _ in 0..config.training.epochs {
        let metrics = train_epoch(&mut params, &mut state, &dataset, &tc)?;
        let line = serde_json::to_string(&metrics)
            .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
        writeln!(metrics_sink, "{line}")?;
    }
    metrics_sink.flush()?;

    let mut sink = BufWriter::new(File::create(&config.paths.checkpoint)?);
    save_checkpoint(&mut sink, &config.network, &params)?;
    Ok(params)
}

/// Train the n-gram model from the corpus file and write it as ARPA.
pub fn run_lm_train(config: &PipelineConfig) -> Result<NGramModel> {
    let text = std::fs::read_to_string(&config.paths.lm_corpus)?;
    let model =
        train_ngram(text.lines(), &config.lm).map_err(|e| e.in_module("ngram-lm"))?;
    let mut sink = BufWriter::new(File::create(&config.paths.lm)?);
    model.save_arpa(&mut sink)?;
    Ok(model)
}

/// One line of the manifest written by an augmentation run.
#[derive(Debug, Clone)]
pub struct AugmentedEntry {
    pub wav_path: PathBuf,
    pub transcript: String,
    pub speaker_id: String,
    pub snr_db: f64,
    pub noise_sources: Vec<String>,
    pub flagged: bool,
}

/// Mix screened noise into every training utterance and emit an
/// augmented manifest (original columns plus `snr_db` and
/// `noise_sources`) alongside the new WAV files.
pub fn run_augment(config: &PipelineConfig) -> Result<Vec<AugmentedEntry>> {
    let manifest = ingest_manifest(&config.paths.train_manifest)?;
    let noise_text = std::fs::read_to_string(&config.paths.noise_manifest)?;

    // screen candidate clips against the band profile of the corpus head
    let reference_utt = load_utterance(&manifest.entries[0])?;
    let reference = band_power_profile(
        &reference_utt.samples,
        reference_utt.sample_rate_hz,
        DEFAULT_BAND_COUNT,
    )?;
    let mut clips = Vec::new();
    for line in noise_text.lines().filter(|l| !l.trim().is_empty()) {
        let path = PathBuf::from(line.trim());
        let (samples, rate) = crate::audio::read_wav(&path)?;
        let clip = NoiseClip {
            samples,
            sample_rate_hz: rate,
            source_id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        if accept_noise_clip(&clip, &reference, config.augment.band_tolerance_db)? {
            clips.push(clip);
        }
    }
    if clips.is_empty() {
        return Err(Error::NoData("every noise clip was rejected".into()));
    }

    std::fs::create_dir_all(&config.paths.output_dir)?;
    let manifest_path = config.paths.output_dir.join("augmented.tsv");
    let mut sink = BufWriter::new(File::create(&manifest_path)?);
    let mut out = Vec::with_capacity(manifest.entries.len());
    for (i, entry) in manifest.entries.iter().enumerate() {
        let utt = load_utterance(entry)?;
        let seed = config.training.seed.wrapping_add(i as u64);
        let target = if config.augment.snr_db.is_nan() {
            draw_target_snr(seed)
        } else {
            config.augment.snr_db
        };
        let mixed = mix_noise(&utt, &clips, target, seed).map_err(|e| e.in_module("augmentation"))?;
        let wav_path = config
            .paths
            .output_dir
            .join(format!("{}-noisy.wav", entry.utterance_id));
        write_wav(&wav_path, &mixed.utterance.samples, utt.sample_rate_hz)?;
        writeln!(
            sink,
            "{}\t{}\t{}\t{:.2}\t{}",
            wav_path.display(),
            entry.transcript,
            entry.speaker_id,
            target,
            mixed.noise_sources.join(",")
        )?;
        out.push(AugmentedEntry {
            wav_path,
            transcript: entry.transcript.clone(),
            speaker_id: entry.speaker_id.clone(),
            snr_db: target,
            noise_sources: mixed.noise_sources,
            flagged: mixed.flagged,
        });
    }
    Ok(out)
}

fn load_models(config: &PipelineConfig) -> Result<Vec<(NetworkConfig, NetworkParams)>> {
    let mut source = BufReader::new(File::open(&config.paths.checkpoint)?);
    let (net, params) = load_checkpoint(&mut source)?;
    Ok(vec![(net, params)])
}

fn load_lm(config: &PipelineConfig) -> Result<NGramModel> {
    let source = BufReader::new(File::open(&config.paths.lm)?);
    NGramModel::load_arpa(source).map_err(|e| e.in_module("ngram-lm"))
}

/// Decode the evaluation manifest; returns tab-separated
/// `utterance_id  hypothesis  score` lines.
pub fn run_decode(config: &PipelineConfig, jitter: bool) -> Result<Vec<String>> {
    let models = load_models(config)?;
    let lm = load_lm(config)?;
    let manifest = ingest_manifest(&config.paths.eval_manifest)?;
    let mut lines = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let utt = load_utterance(entry)?;
        let (text, score) = ensemble_decode(
            &models,
            &utt,
            &config.feature,
            jitter,
            config.augment.jitter_ms,
            &lm,
            &config.decoder,
            false,
        )
        .map_err(|e| e.in_module("decoder"))?;
        lines.push(format!("{}\t{}\t{:.6}", entry.utterance_id, text, score));
    }
    Ok(lines)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceResult {
    pub utterance_id: String,
    pub reference: String,
    pub hypothesis: String,
    pub wer: Option<f64>,
    pub cer: Option<f64>,
}

/// Evaluation summary. Timing is tracked for the human-readable log but
/// excluded from the serialized report so reruns are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub utterances: Vec<UtteranceResult>,
    /// Total word edits over total reference words, not a mean of rates.
    pub corpus_wer: f64,
    pub corpus_cer: f64,
    pub alpha: f64,
    pub beta: f64,
    pub beam_width: usize,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl EvaluationReport {
    pub fn summary(&self) -> String {
        format!(
            "{} utterances, corpus WER {:.4}, corpus CER {:.4} (alpha {}, beta {}, beam {}, {:.1}s)",
            self.utterances.len(),
            self.corpus_wer,
            self.corpus_cer,
            self.alpha,
            self.beta,
            self.beam_width,
            self.wall_seconds
        )
    }
}

fn corpus_rate(pairs: &[(String, String)], by_char: bool) -> f64 {
    let mut edits = 0usize;
    let mut len = 0usize;
    for (r, h) in pairs {
        let counts = if by_char {
            crate::decoder::char_edits(r, h)
        } else {
            crate::decoder::word_edits(r, h)
        };
        edits += counts.edits;
        len += counts.reference_len;
    }
    if len == 0 {
        f64::NAN
    } else {
        edits as f64 / len as f64
    }
}

/// Decode the evaluation set, score it, and write the JSON report.
pub fn run_evaluate(config: &PipelineConfig, jitter: bool) -> Result<EvaluationReport> {
    let started = Instant::now();
    let models = load_models(config)?;
    let lm = load_lm(config)?;
    let manifest = ingest_manifest(&config.paths.eval_manifest)?;

    let mut utterances = Vec::with_capacity(manifest.entries.len());
    let mut pairs = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let utt = load_utterance(entry)?;
        let (hypothesis, _) = ensemble_decode(
            &models,
            &utt,
            &config.feature,
            jitter,
            config.augment.jitter_ms,
            &lm,
            &config.decoder,
            false,
        )
        .map_err(|e| e.in_module("decoder"))?;
        utterances.push(UtteranceResult {
            utterance_id: entry.utterance_id.clone(),
            reference: entry.transcript.clone(),
            hypothesis: hypothesis.clone(),
            wer: wer(&entry.transcript, &hypothesis).value(),
            cer: cer(&entry.transcript, &hypothesis).value(),
        });
        pairs.push((entry.transcript.clone(), hypothesis));
    }

    let corpus = corpus_wer(pairs.iter().map(|(r, h)| (r.as_str(), h.as_str())));
    let report = EvaluationReport {
        corpus_wer: match corpus {
            Rate::Value(v) => v,
            Rate::Undefined => f64::NAN,
        },
        corpus_cer: corpus_rate(&pairs, true),
        alpha: config.decoder.alpha,
        beta: config.decoder.beta,
        beam_width: config.decoder.beam_width,
        utterances,
        wall_seconds: started.elapsed().as_secs_f64(),
    };

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
    std::fs::write(&config.paths.report, json.as_bytes())?;
    Ok(report)
}

/// Greedy (LM-free) transcription of one utterance, used by tooling and
/// the overfit sanity checks.
pub fn greedy_transcribe(
    config: &NetworkConfig,
    params: &NetworkParams,
    utt: &Utterance,
    feat: &FeatureSettings,
) -> Result<String> {
    let frames = extract_features(utt, feat, None)?;
    let grid = posterior_grid(config, params, &frames)?;
    Ok(greedy_decode(&grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn sine(len: usize, rate: f64, hz: f64) -> Vec<f64> {
        (0..len)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * hz * i as f64 / rate).sin())
            .collect()
    }

    fn tiny_config(dir: &Path) -> PipelineConfig {
        let mut config = PipelineConfig::default();
        config.feature.n_banks = 6;
        config.network.input_dim = 7;
        config.network.context = 2;
        config.network.hidden = [8, 8, 8, 8, 8];
        config.network.dropout_rate = 0.0;
        config.network.dropout_layer5 = false;
        config.training.batch_size = 1;
        config.training.epochs = 2;
        config.lm.order = 2;
        config.paths.train_manifest = dir.join("train.tsv");
        config.paths.eval_manifest = dir.join("eval.tsv");
        config.paths.lm_corpus = dir.join("corpus.txt");
        config.paths.checkpoint = dir.join("model.ckpt");
        config.paths.stats = dir.join("stats.txt");
        config.paths.lm = dir.join("model.arpa");
        config.paths.metrics = dir.join("metrics.jsonl");
        config.paths.report = dir.join("report.json");
        config.paths.output_dir = dir.join("out");
        config
    }

    fn write_fixture(dir: &Path) -> PipelineConfig {
        let config = tiny_config(dir);
        for (name, hz) in [("a.wav", 440.0), ("b.wav", 660.0)] {
            write_wav(&dir.join(name), &sine(8000, 16_000.0, hz), 16_000).unwrap();
        }
        std::fs::write(
            &config.paths.train_manifest,
            format!(
                "{}\tyes\tspk1\n{}\tno\tspk2\n",
                dir.join("a.wav").display(),
                dir.join("b.wav").display()
            ),
        )
        .unwrap();
        std::fs::write(
            &config.paths.eval_manifest,
            format!("{}\tyes\tspk1\n", dir.join("a.wav").display()),
        )
        .unwrap();
        std::fs::write(&config.paths.lm_corpus, "yes\nno\nyes\nno no yes\n").unwrap();
        config
    }

    #[test]
    fn default_config_validates() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn config_overrides_and_derived_input_dim() {
        let config = PipelineConfig::from_str_source(
            "# comment\n\
             feature.n_banks = 12\n\
             network.hidden = 16,16,16,16,16\n\
             augment.snr_db = random\n\
             decoder.alpha = 0.75\n",
        )
        .unwrap();
        assert_eq!(config.feature.n_banks, 12);
        assert_eq!(config.network.input_dim, 13);
        assert_eq!(config.network.hidden, [16; 5]);
        assert!(config.augment.snr_db.is_nan());
        assert_eq!(config.decoder.alpha, 0.75);
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        let err = PipelineConfig::from_str_source("feature.nbanks = 12\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn echo_output_parses_back_to_the_same_config() {
        let mut config = PipelineConfig::default();
        config.feature.n_banks = 9;
        config.network.input_dim = 10;
        config.decoder.beta = 0.25;
        let echoed = config.echo();
        let reparsed = PipelineConfig::from_str_source(&echoed).unwrap();
        assert_eq!(reparsed.echo(), echoed);
    }

    #[test]
    fn manifest_rejects_lines_with_reasons() {
        let dir = tempfile::tempdir().unwrap();
        write_wav(&dir.path().join("ok.wav"), &sine(800, 16_000.0, 440.0), 16_000).unwrap();
        let manifest_path = dir.path().join("m.tsv");
        std::fs::write(
            &manifest_path,
            format!(
                "{ok}\tHello There\tspk1\n\
                 {ok}\tcall 3 cabs\tspk1\n\
                 {missing}\tfine text\tspk2\n\
                 only two fields\there\n",
                ok = dir.path().join("ok.wav").display(),
                missing = dir.path().join("gone.wav").display()
            ),
        )
        .unwrap();
        let manifest = ingest_manifest(&manifest_path).unwrap();
        assert_eq!(manifest.entries.len(), 1);
        assert_eq!(manifest.entries[0].transcript, "hello there");
        assert_eq!(manifest.entries[0].utterance_id, "ok-0001");
        let reasons: Vec<&str> = manifest.rejected.iter().map(|r| r.reason).collect();
        assert_eq!(reasons, vec!["alphabet", "io", "format"]);
    }

    #[test]
    fn manifest_with_no_valid_lines_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = dir.path().join("m.tsv");
        std::fs::write(&manifest_path, "bad line\n\n").unwrap();
        let err = ingest_manifest(&manifest_path).unwrap_err();
        assert!(matches!(err, Error::NoData(_)));
    }

    #[test]
    fn averaged_grid_rows_sum_to_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut grids = Vec::new();
        for _ in 0..3 {
            let mut probs = Array2::from_shape_fn((4, 5), |_| rng.random_range(0.01..1.0));
            for mut row in probs.rows_mut() {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            grids.push(PosteriorGrid::from_probs(probs));
        }
        for log_space in [false, true] {
            let avg = average_grids(&grids, log_space).unwrap();
            for row in avg.probs.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mismatched_grid_shapes_are_an_alignment_error() {
        let a = PosteriorGrid::from_probs(Array2::from_elem((3, 4), 0.25));
        let b = PosteriorGrid::from_probs(Array2::from_elem((2, 4), 0.25));
        let err = average_grids(&[a, b], false).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn ensemble_of_one_matches_plain_decoding() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_fixture(dir.path());
        let lm = run_lm_train(&config).unwrap();
        let params = init_params(&config.network, 7).unwrap();
        let utt = Utterance::new(sine(8000, 16_000.0, 440.0), 16_000, "yes", "u1");

        let frames = extract_features(&utt, &config.feature, None).unwrap();
        let grid = posterior_grid(&config.network, &params, &frames).unwrap();
        let expected = beam_search(&grid, &lm, &config.decoder).unwrap();

        let models = vec![(config.network.clone(), params)];
        let got = ensemble_decode(
            &models,
            &utt,
            &config.feature,
            false,
            config.augment.jitter_ms,
            &lm,
            &config.decoder,
            false,
        )
        .unwrap();
        assert_eq!(got.0, expected.0);
        assert!((got.1 - expected.1).abs() < 1e-9);
    }

    #[test]
    fn duplicated_model_matches_a_single_model() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_fixture(dir.path());
        let lm = run_lm_train(&config).unwrap();
        let params = init_params(&config.network, 3).unwrap();
        let utt = Utterance::new(sine(8000, 16_000.0, 523.0), 16_000, "no", "u2");

        let one = vec![(config.network.clone(), params.clone())];
        let two = vec![
            (config.network.clone(), params.clone()),
            (config.network.clone(), params),
        ];
        let args = |models: &[(NetworkConfig, NetworkParams)]| {
            ensemble_decode(
                models,
                &utt,
                &config.feature,
                false,
                config.augment.jitter_ms,
                &lm,
                &config.decoder,
                false,
            )
            .unwrap()
        };
        let (text_one, score_one) = args(&one);
        let (text_two, score_two) = args(&two);
        assert_eq!(text_one, text_two);
        assert!((score_one - score_two).abs() < 1e-9);
    }

    #[test]
    fn jittered_ensemble_decodes_without_error() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_fixture(dir.path());
        let lm = run_lm_train(&config).unwrap();
        let params = init_params(&config.network, 5).unwrap();
        let utt = Utterance::new(sine(8000, 16_000.0, 440.0), 16_000, "yes", "u3");
        let models = vec![(config.network.clone(), params)];
        let (text, score) = ensemble_decode(
            &models,
            &utt,
            &config.feature,
            true,
            config.augment.jitter_ms,
            &lm,
            &config.decoder,
            false,
        )
        .unwrap();
        assert!(score.is_finite());
        let _ = text;
    }

    #[test]
    fn full_pipeline_smoke_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_fixture(dir.path());

        let stats = run_stats(&config).unwrap();
        assert_eq!(stats.dim(), config.feature.feature_dim());
        assert!(config.paths.stats.exists());

        run_train(&config).unwrap();
        let first_checkpoint = std::fs::read(&config.paths.checkpoint).unwrap();
        run_train(&config).unwrap();
        let second_checkpoint = std::fs::read(&config.paths.checkpoint).unwrap();
        assert_eq!(first_checkpoint, second_checkpoint);

        let metrics = std::fs::read_to_string(&config.paths.metrics).unwrap();
        assert_eq!(metrics.lines().count(), config.training.epochs);
        for line in metrics.lines() {
            let value: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(value["mean_loss"].as_f64().unwrap().is_finite());
        }

        run_lm_train(&config).unwrap();
        let decoded = run_decode(&config, false).unwrap();
        assert_eq!(decoded.len(), 1);
        assert!(decoded[0].starts_with("a-0001\t"));

        let report = run_evaluate(&config, false).unwrap();
        assert_eq!(report.utterances.len(), 1);
        let first_report = std::fs::read(&config.paths.report).unwrap();
        run_evaluate(&config, false).unwrap();
        let second_report = std::fs::read(&config.paths.report).unwrap();
        assert_eq!(first_report, second_report);
    }

    #[test]
    fn augment_writes_wavs_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = write_fixture(dir.path());
        config.augment.snr_db = 10.0;
        // broadband noise so clip screening accepts it against speech
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let noise: Vec<f64> = (0..8000).map(|_| rng.random_range(-0.1..0.1)).collect();
        write_wav(&dir.path().join("noise.wav"), &noise, 16_000).unwrap();
        config.paths.noise_manifest = dir.path().join("noise.tsv");
        std::fs::write(
            &config.paths.noise_manifest,
            format!("{}\n", dir.path().join("noise.wav").display()),
        )
        .unwrap();
        // the sine-tone reference has near-floor bands, so screening needs
        // a very loose tolerance here
        config.augment.band_tolerance_db = 150.0;

        let entries = run_augment(&config).unwrap();
        assert_eq!(entries.len(), 2);
        for entry in &entries {
            assert!(entry.wav_path.exists());
            assert_eq!(entry.snr_db, 10.0);
            assert_eq!(entry.noise_sources, vec!["noise".to_string()]);
        }
        let manifest = std::fs::read_to_string(config.paths.output_dir.join("augmented.tsv")).unwrap();
        assert_eq!(manifest.lines().count(), 2);
        assert!(manifest.lines().all(|l| l.split('\t').count() == 5));
    }
}
