//! Flat `section.key = value` configuration file shared by every
//! subcommand. Unknown keys are errors so typos never silently fall back
//! to defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::lm::{LmTrainConfig, Smoothing};
use crate::network::NetworkConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationMode {
    PerUtterance,
    AudioPower,
    PerSpeaker,
    Global,
    None,
}

impl NormalizationMode {
    fn as_str(&self) -> &'static str {
        match self {
            NormalizationMode::PerUtterance => "per_utterance",
            NormalizationMode::AudioPower => "audio_power",
            NormalizationMode::PerSpeaker => "per_speaker",
            NormalizationMode::Global => "global",
            NormalizationMode::None => "none",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureSettings {
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_banks: usize,
    pub normalization: NormalizationMode,
}

impl FeatureSettings {
    /// Dimension of one feature frame: the filter banks plus the energy
    /// column.
    pub fn feature_dim(&self) -> usize {
        self.n_banks + 1
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub anneal_factor: f64,
    pub n_workers: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AugmentSettings {
    /// Fixed target SNR in dB; NaN means draw per utterance from the
    /// default 2-6 dB range.
    pub snr_db: f64,
    pub band_tolerance_db: f64,
    pub jitter_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PipelinePaths {
    pub train_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    pub noise_manifest: PathBuf,
    pub lm_corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub stats: PathBuf,
    pub lm: PathBuf,
    pub metrics: PathBuf,
    pub report: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub feature: FeatureSettings,
    pub network: NetworkConfig,
    pub lm: LmTrainConfig,
    pub decoder: DecoderConfig,
    pub training: TrainingSettings,
    pub augment: AugmentSettings,
    pub paths: PipelinePaths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            feature: FeatureSettings {
                sample_rate_hz: 16_000,
                window_ms: 20.0,
                hop_ms: 10.0,
                n_banks: 20,
                normalization: NormalizationMode::PerUtterance,
            },
            network: NetworkConfig {
                context: 5,
                stride: 2,
                hidden: [128, 128, 128, 128, 128],
                input_dim: 21,
                dropout_rate: 0.05,
                dropout_layer5: true,
            },
            lm: LmTrainConfig::new(3),
            decoder: DecoderConfig::default(),
            training: TrainingSettings {
                batch_size: 4,
                epochs: 15,
                learning_rate: 0.001,
                momentum: 0.99,
                anneal_factor: 0.95,
                n_workers: 1,
                seed: 0,
            },
            augment: AugmentSettings {
                snr_db: f64::NAN,
                band_tolerance_db: 15.0,
                jitter_ms: 5.0,
            },
            paths: PipelinePaths::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid value {value:?} for {key}"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Parse {
            line,
            msg: format!("invalid boolean {other:?} for {key}"),
        }),
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_source(&text)
    }

    pub fn from_str_source(text: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected `key = value`, found {line:?}"),
            })?;
            config.apply(line_no, key.trim(), value.trim())?;
        }
        config.network.input_dim = config.feature.feature_dim();
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        match key {
            "feature.sample_rate_hz" => self.feature.sample_rate_hz = parse(line, key, value)?,
            "feature.window_ms" => self.feature.window_ms = parse(line, key, value)?,
            "feature.hop_ms" => self.feature.hop_ms = parse(line, key, value)?,
            "feature.n_banks" => self.feature.n_banks = parse(line, key, value)?,
            "feature.normalization" => {
                self.feature.normalization = match value {
                    "per_utterance" => NormalizationMode::PerUtterance,
                    "audio_power" => NormalizationMode::AudioPower,
                    "per_speaker" => NormalizationMode::PerSpeaker,
                    "global" => NormalizationMode::Global,
                    "none" => NormalizationMode::None,
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("unknown normalization {other:?}"),
                        })
                    }
                }
            }
            "network.context" => self.network.context = parse(line, key, value)?,
            "network.stride" => self.network.stride = parse(line, key, value)?,
            "network.hidden" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| parse(line, key, p))
                    .collect::<Result<_>>()?;
                self.network.hidden = parts.try_into().map_err(|_| Error::Parse {
                    line,
                    msg: "network.hidden needs exactly 5 comma-separated sizes".into(),
                })?;
            }
            "network.dropout_rate" => self.network.dropout_rate = parse(line, key, value)?,
            "network.dropout_layer5" => self.network.dropout_layer5 = parse_bool(line, key, value)?,
            "lm.order" => self.lm.order = parse(line, key, value)?,
            "lm.vocab_cap" => self.lm.vocab_cap = parse(line, key, value)?,
            "lm.min_char_coverage" => self.lm.min_char_coverage = parse(line, key, value)?,
            "lm.smoothing" => {
                self.lm.smoothing = match value {
                    "kneser_ney" => Smoothing::InterpolatedKneserNey,
                    "katz" => Smoothing::Katz,
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("unknown smoothing {other:?}"),
                        })
                    }
                }
            }
            "decoder.alpha" => self.decoder.alpha = parse(line, key, value)?,
            "decoder.beta" => self.decoder.beta = parse(line, key, value)?,
            "decoder.beam_width" => self.decoder.beam_width = parse(line, key, value)?,
            "decoder.prune_threshold" => self.decoder.prune_threshold = parse(line, key, value)?,
            "training.batch_size" => self.training.batch_size = parse(line, key, value)?,
            "training.epochs" => self.training.epochs = parse(line, key, value)?,
            "training.learning_rate" => self.training.learning_rate = parse(line, key, value)?,
            "training.momentum" => self.training.momentum = parse(line, key, value)?,
            "training.anneal_factor" => self.training.anneal_factor = parse(line, key, value)?,
            "training.n_workers" => self.training.n_workers = parse(line, key, value)?,
            "training.seed" => self.training.seed = parse(line, key, value)?,
            "augment.snr_db" => {
                self.augment.snr_db = if value == "random" {
                    f64::NAN
                } else {
                    parse(line, key, value)?
                }
            }
            "augment.band_tolerance_db" => {
                self.augment.band_tolerance_db = parse(line, key, value)?
            }
            "augment.jitter_ms" => self.augment.jitter_ms = parse(line, key, value)?,
            "paths.train_manifest" => self.paths.train_manifest = PathBuf::from(value),
            "paths.eval_manifest" => self.paths.eval_manifest = PathBuf::from(value),
            "paths.noise_manifest" => self.paths.noise_manifest = PathBuf::from(value),
            "paths.lm_corpus" => self.paths.lm_corpus = PathBuf::from(value),
            "paths.checkpoint" => self.paths.checkpoint = PathBuf::from(value),
            "paths.stats" => self.paths.stats = PathBuf::from(value),
            "paths.lm" => self.paths.lm = PathBuf::from(value),
            "paths.metrics" => self.paths.metrics = PathBuf::from(value),
            "paths.report" => self.paths.report = PathBuf::from(value),
            "paths.output_dir" => self.paths.output_dir = PathBuf::from(value),
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown configuration key {other:?}"),
                })
            }
        }
        Ok(())
    }

    /// Cross-module consistency checks, run before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.network.input_dim != self.feature.feature_dim() {
            return Err(Error::BadConfig(format!(
                "network input dim {} does not match the {}-bank feature dim {}",
                self.network.input_dim,
                self.feature.n_banks,
                self.feature.feature_dim()
            )));
        }
        self.network.validate()?;
        self.decoder.validate()?;
        if self.training.batch_size < 1 || self.training.n_workers < 1 {
            return Err(Error::BadConfig(
                "batch size and worker count must be at least 1".into(),
            ));
        }
        if self.training.learning_rate <= 0.0 {
            return Err(Error::BadConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.training.momentum) {
            return Err(Error::BadConfig("momentum must be in [0, 1)".into()));
        }
        if !(0.0 < self.training.anneal_factor && self.training.anneal_factor <= 1.0) {
            return Err(Error::BadConfig("anneal factor must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Deterministic listing of every resolved key, logged at startup.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let p = |s: &PathBuf| s.display().to_string();
        let pairs: Vec<(String, String)> = vec![
            ("feature.sample_rate_hz".into(), self.feature.sample_rate_hz.to_string()),
            ("feature.window_ms".into(), self.feature.window_ms.to_string()),
            ("feature.hop_ms".into(), self.feature.hop_ms.to_string()),
            ("feature.n_banks".into(), self.feature.n_banks.to_string()),
            ("feature.normalization".into(), self.feature.normalization.as_str().into()),
            ("network.context".into(), self.network.context.to_string()),
            ("network.stride".into(), self.network.stride.to_string()),
            (
                "network.hidden".into(),
                self.network
                    .hidden
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("network.dropout_rate".into(), self.network.dropout_rate.to_string()),
            ("network.dropout_layer5".into(), self.network.dropout_layer5.to_string()),
            ("lm.order".into(), self.lm.order.to_string()),
            ("lm.vocab_cap".into(), self.lm.vocab_cap.to_string()),
            ("lm.min_char_coverage".into(), self.lm.min_char_coverage.to_string()),
            (
                "lm.smoothing".into(),
                match self.lm.smoothing {
                    Smoothing::InterpolatedKneserNey => "kneser_ney".into(),
                    Smoothing::Katz => "katz".into(),
                },
            ),
            ("decoder.alpha".into(), self.decoder.alpha.to_string()),
            ("decoder.beta".into(), self.decoder.beta.to_string()),
            ("decoder.beam_width".into(), self.decoder.beam_width.to_string()),
            ("decoder.prune_threshold".into(), self.decoder.prune_threshold.to_string()),
            ("training.batch_size".into(), self.training.batch_size.to_string()),
            ("training.epochs".into(), self.training.epochs.to_string()),
            ("training.learning_rate".into(), self.training.learning_rate.to_string()),
            ("training.momentum".into(), self.training.momentum.to_string()),
            ("training.anneal_factor".into(), self.training.anneal_factor.to_string()),
            ("training.n_workers".into(), self.training.n_workers.to_string()),
            ("training.seed".into(), self.training.seed.to_string()),
            (
                "augment.snr_db".into(),
                if self.augment.snr_db.is_nan() {
                    "random".into()
                } else {
                    self.augment.snr_db.to_string()
                },
            ),
            ("augment.band_tolerance_db".into(), self.augment.band_tolerance_db.to_string()),
            ("augment.jitter_ms".into(), self.augment.jitter_ms.to_string()),
            ("paths.train_manifest".into(), p(&self.paths.train_manifest)),
            ("paths.eval_manifest".into(), p(&self.paths.eval_manifest)),
            ("paths.noise_manifest".into(), p(&self.paths.noise_manifest)),
            ("paths.lm_corpus".into(), p(&self.paths.lm_corpus)),
            ("paths.checkpoint".into(), p(&self.paths.checkpoint)),
            ("paths.stats".into(), p(&self.paths.stats)),
            ("paths.lm".into(), p(&self.paths.lm)),
            ("paths.metrics".into(), p(&self.paths.metrics)),
            ("paths.report".into(), p(&self.paths.report)),
            ("paths.output_dir".into(), p(&self.paths.output_dir)),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
