//! Log filter-bank spectrogram features and the three normalization
//! schemes used by the experiments: per-utterance power, per-speaker
//! z-scoring, and global mean/stddev scaling.

use std::io::{BufRead, Write};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{Utterance, SUPPORTED_RATES};
use crate::error::{Error, Result};

/// Power floor applied before taking logs.
pub const LOG_FLOOR: f64 = 1e-10;
/// Standard-deviation floor for the normalization schemes.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationState {
    Raw,
    PerUtterance,
    PerSpeaker,
    Global,
}

impl std::fmt::Display for NormalizationState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NormalizationState::Raw => "raw",
            NormalizationState::PerUtterance => "per_utterance",
            NormalizationState::PerSpeaker => "per_speaker",
            NormalizationState::Global => "global",
        };
        f.write_str(s)
    }
}

/// A `T x F` matrix of features; `F = bank_count + 1`, the last column
/// being the log energy term.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    pub frames: Array2<f64>,
    pub bank_count: usize,
    pub normalization_state: NormalizationState,
    pub speaker_id: Option<String>,
    pub utterance_id: String,
}

impl FeatureSequence {
    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Frame layout for a sample rate and window/hop durations in ms.
#[derive(Debug, Clone, Copy)]
pub struct FrameLayout {
    pub window_len: usize,
    pub hop_len: usize,
    pub fft_size: usize,
}

impl FrameLayout {
    pub fn new(sample_rate_hz: u32, window_ms: f64, hop_ms: f64) -> Result<Self> {
        if !SUPPORTED_RATES.contains(&sample_rate_hz) {
            return Err(Error::BadRate(sample_rate_hz));
        }
        if window_ms < hop_ms || hop_ms <= 0.0 {
            return Err(Error::BadConfig(format!(
                "window {window_ms}ms must be >= hop {hop_ms}ms > 0"
            )));
        }
        let window_len = (window_ms * sample_rate_hz as f64 / 1000.0).round() as usize;
        let hop_len = (hop_ms * sample_rate_hz as f64 / 1000.0).round() as usize;
        Ok(FrameLayout {
            window_len,
            hop_len,
            fft_size: window_len.next_power_of_two(),
        })
    }

    /// `T = floor((num_samples - window_len) / hop_len) + 1`.
    pub fn frame_count(&self, num_samples: usize) -> Option<usize> {
        num_samples
            .checked_sub(self.window_len)
            .map(|rest| rest / self.hop_len + 1)
    }
}

struct SpectrogramPlan {
    layout: FrameLayout,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl SpectrogramPlan {
    fn new(layout: FrameLayout) -> Self {
        let n = layout.window_len;
        let window = (0..n)
            .map(|i| {
                let x = std::f64::consts::TAU * i as f64 / n as f64;
                0.5 - 0.5 * x.cos()
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(layout.fft_size);
        SpectrogramPlan { layout, window, fft }
    }

    /// One-sided power spectrum `|X|^2 / N` of a single frame.
    fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let n = self.layout.fft_size;
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&s, &w)| Complex::new(s * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(n)
            .collect();
        self.fft.process(&mut buf);
        buf[..n / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr() / n as f64)
            .collect()
    }
}

/// Compute the per-frame one-sided power spectrogram. Shared between the
/// feature front end and the noise band-power analysis.
pub fn power_spectrogram(
    samples: &[f64],
    sample_rate_hz: u32,
    window_ms: f64,
    hop_ms: f64,
) -> Result<(Vec<Vec<f64>>, FrameLayout)> {
    let layout = FrameLayout::new(sample_rate_hz, window_ms, hop_ms)?;
    let frame_count = layout
        .frame_count(samples.len())
        .filter(|&t| t > 0)
        .ok_or(Error::TooShort(samples.len(), layout.window_len))?;
    let plan = SpectrogramPlan::new(layout);
    let mut frames = Vec::with_capacity(frame_count);
    for t in 0..frame_count {
        let start = t * layout.hop_len;
        frames.push(plan.power_spectrum(&samples[start..start + layout.window_len]));
    }
    Ok((frames, layout))
}

/// Triangular filters with linearly spaced center frequencies covering
/// 0..Nyquist, evaluated on FFT bins. Row `b` holds the weights of bank `b`.
fn linear_triangular_banks(n_banks: usize, fft_size: usize, sample_rate_hz: u32) -> Array2<f64> {
    let n_bins = fft_size / 2 + 1;
    let nyquist = sample_rate_hz as f64 / 2.0;
    // n_banks + 2 edge points; bank b rises over [edge b, edge b+1] and
    // falls over [edge b+1, edge b+2]
    let edges: Vec<f64> = (0..n_banks + 2)
        .map(|i| nyquist * i as f64 / (n_banks + 1) as f64)
        .collect();
    let mut weights = Array2::zeros((n_banks, n_bins));
    for b in 0..n_banks {
        let (lo, center, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate_hz as f64 / fft_size as f64;
            let w = if f >= lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f <= hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            weights[[b, k]] = w;
        }
    }
    weights
}

/// Raw (unnormalized) log filter-bank features plus a log energy column.
pub fn frame_spectrogram(
    utt: &Utterance,
    window_ms: f64,
    hop_ms: f64,
    n_banks: usize,
) -> Result<FeatureSequence> {
    let (power, layout) = power_spectrogram(&utt.samples, utt.sample_rate_hz, window_ms, hop_ms)?;
    let n_bins = layout.fft_size / 2 + 1;
    if n_banks + 2 > n_bins {
        return Err(Error::BadConfig(format!(
            "{n_banks} banks need more FFT bins than the {n_bins} available"
        )));
    }
    let banks = linear_triangular_banks(n_banks, layout.fft_size, utt.sample_rate_hz);
    let mut frames = Array2::zeros((power.len(), n_banks + 1));
    for (t, spectrum) in power.iter().enumerate() {
        let spectrum = Array1::from_vec(spectrum.clone());
        let bank_vals = banks.dot(&spectrum);
        for b in 0..n_banks {
            frames[[t, b]] = bank_vals[b].max(LOG_FLOOR).ln();
        }
        frames[[t, n_banks]] = spectrum.sum().max(LOG_FLOOR).ln();
    }
    Ok(FeatureSequence {
        frames,
        bank_count: n_banks,
        normalization_state: NormalizationState::Raw,
        speaker_id: utt.speaker_id.clone(),
        utterance_id: utt.utterance_id.clone(),
    })
}

/// Per-utterance power normalization in the feature domain: the mean of
/// the log-energy column is subtracted from every column, which equals
/// rescaling the audio so the mean log frame power is zero. The energy
/// column ends up with mean 0.
pub fn normalize_per_utterance(mut fs: FeatureSequence) -> Result<FeatureSequence> {
    if fs.normalization_state != NormalizationState::Raw {
        return Err(Error::DoubleNormalization(fs.normalization_state.to_string()));
    }
    let energy_col = fs.frames.column(fs.bank_count);
    let mean_energy = energy_col.sum() / energy_col.len() as f64;
    fs.frames.mapv_inplace(|v| v - mean_energy);
    fs.normalization_state = NormalizationState::PerUtterance;
    Ok(fs)
}

/// Audio-domain variant of per-utterance power normalization: scales the
/// samples to unit mean-square power before featurization.
pub fn normalize_audio_power(mut utt: Utterance) -> Result<Utterance> {
    let power = utt.power();
    if power <= 0.0 {
        return Err(Error::DegenerateSnr("zero-power utterance".into()));
    }
    let gain = 1.0 / power.sqrt();
    for s in &mut utt.samples {
        *s *= gain;
    }
    Ok(utt)
}

/// Per-speaker z-scoring: each feature bin gets mean 0 and stddev 1
/// across all frames of each speaker (stddev floored at [`STD_FLOOR`]).
pub fn normalize_per_speaker(batch: Vec<FeatureSequence>) -> Result<Vec<FeatureSequence>> {
    use std::collections::BTreeMap;
    for fs in &batch {
        if fs.normalization_state != NormalizationState::Raw {
            return Err(Error::DoubleNormalization(fs.normalization_state.to_string()));
        }
        if fs.speaker_id.is_none() {
            return Err(Error::NoSpeaker(fs.utterance_id.clone()));
        }
    }
    let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, fs) in batch.iter().enumerate() {
        by_speaker
            .entry(fs.speaker_id.as_deref().unwrap())
            .or_default()
            .push(i);
    }
    let mut stats: Vec<(Array1<f64>, Array1<f64>)> = Vec::with_capacity(batch.len());
    stats.resize(batch.len(), (Array1::zeros(0), Array1::zeros(0)));
    for members in by_speaker.values() {
        let dim = batch[members[0]].feature_dim();
        let mut agg = GlobalFeatureStats::new(dim);
        for &i in members {
            agg.accumulate(&batch[i]);
        }
        let (mean, std) = agg.finish()?;
        for &i in members {
            stats[i] = (mean.clone(), std.clone());
        }
    }
    Ok(batch
        .into_iter()
        .zip(stats)
        .map(|(mut fs, (mean, std))| {
            for mut row in fs.frames.rows_mut() {
                row.zip_mut_with(&mean, |v, m| *v -= m);
                row.zip_mut_with(&std, |v, s| *v /= s);
            }
            fs.normalization_state = NormalizationState::PerSpeaker;
            fs
        })
        .collect())
}

/// Streaming per-bin mean/variance aggregation (Welford), mergeable so
/// corpus scans can run in parallel and combine partials.
#[derive(Debug, Clone)]
pub struct GlobalFeatureStats {
    mean: Array1<f64>,
    m2: Array1<f64>,
    count: u64,
}

impl GlobalFeatureStats {
    pub fn new(dim: usize) -> Self {
        GlobalFeatureStats {
            mean: Array1::zeros(dim),
            m2: Array1::zeros(dim),
            count: 0,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn accumulate(&mut self, fs: &FeatureSequence) {
        for row in fs.frames.rows() {
            self.count += 1;
            let n = self.count as f64;
            for (j, &x) in row.iter().enumerate() {
                let delta = x - self.mean[j];
                self.mean[j] += delta / n;
                self.m2[j] += delta * (x - self.mean[j]);
            }
        }
    }

    /// Associative combine of two partial aggregations.
    pub fn merge(mut self, other: &GlobalFeatureStats) -> Self {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other.clone();
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for j in 0..self.mean.len() {
            let delta = other.mean[j] - self.mean[j];
            self.mean[j] += delta * nb / n;
            self.m2[j] += other.m2[j] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        self
    }

    /// Per-bin mean and floored population stddev.
    pub fn finish(&self) -> Result<(Array1<f64>, Array1<f64>)> {
        if self.count == 0 {
            return Err(Error::NoData("no frames aggregated".into()));
        }
        let n = self.count as f64;
        let std = self.m2.mapv(|m2| (m2 / n).sqrt().max(STD_FLOOR));
        Ok((self.mean.clone(), std))
    }

    /// Text dump: header `F count`, then the mean row and the stddev row.
    pub fn save(&self, sink: &mut dyn Write) -> Result<()> {
        let (mean, std) = self.finish()?;
        writeln!(sink, "{} {}", self.dim(), self.count)?;
        let fmt = |v: &Array1<f64>| {
            v.iter()
                .map(|x| format!("{x:.17e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(sink, "{}", fmt(&mean))?;
        writeln!(sink, "{}", fmt(&std))?;
        Ok(())
    }

    pub fn load(source: &mut dyn BufRead) -> Result<GlobalFeatureStats> {
        let mut lines = source.lines();
        let parse_err = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty stats file"))??;
        let mut it = header.split_whitespace();
        let dim: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(1, "bad dim"))?;
        let count: u64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(1, "bad count"))?;
        let mut read_row = |lineno: usize| -> Result<Array1<f64>> {
            let line = lines
                .next()
                .ok_or_else(|| parse_err(lineno, "missing row"))??;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(lineno, &e.to_string()))?;
            if vals.len() != dim {
                return Err(parse_err(lineno, "row length mismatch"));
            }
            Ok(Array1::from_vec(vals))
        };
        let mean = read_row(2)?;
        let std = read_row(3)?;
        // reconstruct m2 so finish() reproduces the stored stddev
        let n = count as f64;
        let m2 = std.mapv(|s| s * s * n);
        Ok(GlobalFeatureStats { mean, m2, count })
    }
}

/// Single pass over a corpus of feature sequences.
pub fn compute_global_stats<'a>(
    corpus: impl IntoIterator<Item = &'a FeatureSequence>,
) -> Result<GlobalFeatureStats> {
    let mut iter = corpus.into_iter();
    let first = iter.next().ok_or(Error::NoData("empty corpus".into()))?;
    let mut stats = GlobalFeatureStats::new(first.feature_dim());
    stats.accumulate(first);
    for fs in iter {
        stats.accumulate(fs);
    }
    Ok(stats)
}

/// Subtract the global mean and divide by the global stddev per bin.
pub fn apply_global_stats(
    mut fs: FeatureSequence,
    stats: &GlobalFeatureStats,
) -> Result<FeatureSequence> {
    if fs.normalization_state != NormalizationState::Raw {
        return Err(Error::DoubleNormalization(fs.normalization_state.to_string()));
    }
    if stats.count == 0 {
        return Err(Error::NoData("stats aggregated zero frames".into()));
    }
    if stats.dim() != fs.feature_dim() {
        return Err(Error::Shape(format!(
            "stats dim {} vs feature dim {}",
            stats.dim(),
            fs.feature_dim()
        )));
    }
    let (mean, std) = stats.finish()?;
    for mut row in fs.frames.rows_mut() {
        row.zip_mut_with(&mean, |v, m| *v -= m);
        row.zip_mut_with(&std, |v, s| *v /= s);
    }
    fs.normalization_state = NormalizationState::Global;
    Ok(fs)
}

/// Debug/oracle feature dump: header `T F`, one frame per line.
pub fn dump_features(fs: &FeatureSequence, sink: &mut dyn Write) -> Result<()> {
    writeln!(sink, "{} {}", fs.frame_count(), fs.feature_dim())?;
    for row in fs.frames.rows() {
        let line = row
            .iter()
            .map(|x| format!("{x:.17e}"))
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(sink, "{line}")?;
    }
    Ok(())
}

pub fn load_features(source: &mut dyn BufRead) -> Result<Array2<f64>> {
    let mut lines = source.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty feature dump".into(),
    })?;
    let header = header?;
    let mut it = header.split_whitespace();
    let t: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(Error::Parse {
            line: 1,
            msg: "bad frame count".into(),
        })?;
    let f: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(Error::Parse {
            line: 1,
            msg: "bad feature dim".into(),
        })?;
    let mut frames = Array2::zeros((t, f));
    for row in 0..t {
        let (lineno, line) = lines.next().ok_or(Error::Parse {
            line: row + 2,
            msg: "missing frame row".into(),
        })?;
        let line = line?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        if vals.len() != f {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected {f} values, got {}", vals.len()),
            });
        }
        for (j, v) in vals.into_iter().enumerate() {
            frames[[row, j]] = v;
        }
    }
    Ok(frames)
}
