//! Noise superposition augmentation: seed-placed noise clips mixed at an
//! exact target SNR, band-power screening of candidate clips, and small
//! test-time audio translations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::audio::Utterance;
use crate::error::{Error, Result};
use crate::features::power_spectrogram;

/// A candidate noise recording at the pipeline sample rate.
#[derive(Debug, Clone)]
pub struct NoiseClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub source_id: String,
}

/// Average power per linear analysis band.
#[derive(Debug, Clone)]
pub struct BandPowerProfile {
    pub band_power: Vec<f64>,
    /// `band_count + 1` strictly increasing edges in Hz, from 0 to Nyquist.
    pub band_edges: Vec<f64>,
}

pub const DEFAULT_BAND_COUNT: usize = 8;
pub const DEFAULT_BAND_TOLERANCE_DB: f64 = 15.0;
/// Clipping more than this fraction of samples flags the example.
pub const CLIPPING_FLAG_FRACTION: f64 = 0.01;
/// A clip may repeat at most this many times inside one utterance.
const MAX_CLIP_REPETITIONS: usize = 3;

fn mean_square(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64
}

/// Outcome of one mixing call; the gained noise track is kept so callers
/// can verify the realized SNR independently.
#[derive(Debug, Clone)]
pub struct MixResult {
    pub utterance: Utterance,
    /// The gained noise actually added, same length as the clean audio.
    pub applied_noise: Vec<f64>,
    pub gain: f64,
    /// Fraction of output samples that exceeded [-1, 1] before clamping.
    pub clipping_fraction: f64,
    /// True when the clipping fraction crossed the warning threshold.
    pub flagged: bool,
    /// True when an infinite target suppressed the noise entirely.
    pub bypassed: bool,
    pub noise_sources: Vec<String>,
}

/// Default augmentation target per the 2-6 dB convention.
pub fn draw_target_snr(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.random_range(2.0..=6.0)
}

/// Superimpose looped noise clips over the clean utterance, scaling the
/// summed noise track by one gain so the realized SNR equals the target
/// exactly. An infinite target bypasses mixing and returns the clean
/// audio unchanged.
pub fn mix_noise(
    clean: &Utterance,
    clips: &[NoiseClip],
    target_snr_db: f64,
    seed: u64,
) -> Result<MixResult> {
    if clips.is_empty() {
        return Err(Error::NoData("no noise clips supplied".into()));
    }
    for clip in clips {
        if clip.samples.is_empty() {
            return Err(Error::NoData(format!("noise clip {} is empty", clip.source_id)));
        }
        if clip.sample_rate_hz != clean.sample_rate_hz {
            return Err(Error::BadRate(clip.sample_rate_hz));
        }
    }
    let signal_power = mean_square(&clean.samples);
    if signal_power <= 0.0 {
        return Err(Error::DegenerateSnr("clean utterance has zero power".into()));
    }

    if target_snr_db.is_infinite() && target_snr_db > 0.0 {
        return Ok(MixResult {
            utterance: clean.clone(),
            applied_noise: vec![0.0; clean.samples.len()],
            gain: 0.0,
            clipping_fraction: 0.0,
            flagged: false,
            bypassed: true,
            noise_sources: Vec::new(),
        });
    }

    // lay clips end to end in seed-shuffled order, looping each at most
    // MAX_CLIP_REPETITIONS times, until the utterance is covered
    let n = clean.samples.len();
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut track = vec![0.0f64; n];
    let mut used = vec![0usize; clips.len()];
    let mut sources = Vec::new();
    let mut cursor = 0;
    let mut slot = 0;
    while cursor < n {
        let clip_idx = order[slot % order.len()];
        slot += 1;
        if used[clip_idx] >= MAX_CLIP_REPETITIONS {
            if used.iter().all(|&u| u >= MAX_CLIP_REPETITIONS) {
                return Err(Error::NoData(
                    "noise clips cannot tile the utterance within the repetition limit".into(),
                ));
            }
            continue;
        }
        used[clip_idx] += 1;
        let clip = &clips[clip_idx];
        if used[clip_idx] == 1 {
            sources.push(clip.source_id.clone());
        }
        let take = clip.samples.len().min(n - cursor);
        for (dst, src) in track[cursor..cursor + take].iter_mut().zip(&clip.samples) {
            *dst += src;
        }
        cursor += take;
    }

    let noise_power = mean_square(&track);
    if noise_power <= 0.0 {
        return Err(Error::DegenerateSnr("summed noise track has zero power".into()));
    }
    let gain = (signal_power / (noise_power * 10f64.powf(target_snr_db / 10.0))).sqrt();

    let mut mixed = Vec::with_capacity(n);
    let mut clipped = 0usize;
    let mut applied = Vec::with_capacity(n);
    for (s, x) in clean.samples.iter().zip(&track) {
        let noise = gain * x;
        let raw = s + noise;
        if raw.abs() > 1.0 {
            clipped += 1;
        }
        mixed.push(raw.clamp(-1.0, 1.0));
        applied.push(noise);
    }
    let clipping_fraction = clipped as f64 / n as f64;

    let mut utterance = clean.clone();
    utterance.samples = mixed;
    Ok(MixResult {
        utterance,
        applied_noise: applied,
        gain,
        clipping_fraction,
        flagged: clipping_fraction > CLIPPING_FLAG_FRACTION,
        bypassed: false,
        noise_sources: sources,
    })
}

/// `10 log10(P_signal / P_noise)` over mean-square powers.
pub fn compute_snr(signal: &Utterance, noise_samples: &[f64]) -> Result<f64> {
    if signal.samples.len() != noise_samples.len() {
        return Err(Error::Shape(format!(
            "signal has {} samples, noise {}",
            signal.samples.len(),
            noise_samples.len()
        )));
    }
    let ps = mean_square(&signal.samples);
    let pn = mean_square(noise_samples);
    if ps <= 0.0 || pn <= 0.0 {
        return Err(Error::DegenerateSnr("zero-power operand".into()));
    }
    Ok(10.0 * (ps / pn).log10())
}

/// Mean power per band over equal-width linear bands spanning 0..Nyquist,
/// computed from the power spectrogram with the standard 20 ms / 10 ms
/// analysis framing.
pub fn band_power_profile(
    samples: &[f64],
    sample_rate_hz: u32,
    band_count: usize,
) -> Result<BandPowerProfile> {
    if band_count < 1 {
        return Err(Error::BadConfig("band count must be at least 1".into()));
    }
    let (power, layout) = power_spectrogram(samples, sample_rate_hz, 20.0, 10.0)?;
    let nyquist = sample_rate_hz as f64 / 2.0;
    let n_bins = layout.fft_size / 2 + 1;
    let hz_per_bin = sample_rate_hz as f64 / layout.fft_size as f64;

    let band_edges: Vec<f64> = (0..=band_count)
        .map(|b| nyquist * b as f64 / band_count as f64)
        .collect();
    let mut sums = vec![0.0f64; band_count];
    let mut counts = vec![0usize; band_count];
    for frame in &power {
        for (bin, &p) in frame.iter().enumerate().take(n_bins) {
            let freq = bin as f64 * hz_per_bin;
            let band = ((freq / nyquist * band_count as f64) as usize).min(band_count - 1);
            sums[band] += p;
            counts[band] += 1;
        }
    }
    let band_power = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(BandPowerProfile { band_power, band_edges })
}

const POWER_FLOOR: f64 = 1e-12;

/// Accept the clip iff every band's mean power is within the tolerance
/// (in dB) of the reference profile.
pub fn accept_noise_clip(
    clip: &NoiseClip,
    reference: &BandPowerProfile,
    tolerance_db: f64,
) -> Result<bool> {
    if tolerance_db < 0.0 {
        return Err(Error::BadConfig("tolerance must be nonnegative".into()));
    }
    let profile = band_power_profile(
        &clip.samples,
        clip.sample_rate_hz,
        reference.band_power.len(),
    )?;
    for (got, want) in profile.band_power.iter().zip(&reference.band_power) {
        let diff = 10.0 * (got.max(POWER_FLOOR) / want.max(POWER_FLOOR)).log10();
        if diff.abs() > tolerance_db {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Translate the audio by `shift_ms` (positive = later), zero-filling the
/// vacated edge and preserving length.
pub fn jitter_translate(utt: &Utterance, shift_ms: f64) -> Result<Utterance> {
    let n = utt.samples.len();
    let shift = (shift_ms * utt.sample_rate_hz as f64 / 1000.0).round() as i64;
    if shift.unsigned_abs() as usize >= n {
        return Err(Error::BadShift(format!(
            "shift of {shift} samples exceeds utterance length {n}"
        )));
    }
    let mut samples = vec![0.0f64; n];
    if shift >= 0 {
        let k = shift as usize;
        samples[k..].copy_from_slice(&utt.samples[..n - k]);
    } else {
        let k = (-shift) as usize;
        samples[..n - k].copy_from_slice(&utt.samples[k..]);
    }
    let mut out = utt.clone();
    out.samples = samples;
    Ok(out)
}
