//! Raw audio handling: utterances, 16-bit PCM WAV reading/writing.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Sample rates the pipeline accepts.
pub const SUPPORTED_RATES: [u32; 2] = [8000, 16000];

/// A single training or evaluation example: mono audio plus transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    /// Amplitudes in `[-1, 1]`.
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    /// Normalized transcript over the character alphabet.
    pub transcript: String,
    pub speaker_id: Option<String>,
    pub utterance_id: String,
}

impl Utterance {
    pub fn new(
        samples: Vec<f64>,
        sample_rate_hz: u32,
        transcript: impl Into<String>,
        utterance_id: impl Into<String>,
    ) -> Self {
        Utterance {
            samples,
            sample_rate_hz,
            transcript: transcript.into(),
            speaker_id: None,
            utterance_id: utterance_id.into(),
        }
    }

    pub fn with_speaker(mut self, speaker: impl Into<String>) -> Self {
        self.speaker_id = Some(speaker.into());
        self
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean-square power of the samples.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

fn check_rate(rate: u32) -> Result<()> {
    if SUPPORTED_RATES.contains(&rate) {
        Ok(())
    } else {
        Err(Error::BadRate(rate))
    }
}

/// Read a mono 16-bit PCM little-endian WAV file.
///
/// Samples are scaled by 1/32768 into `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_wav(&bytes)
}

pub fn parse_wav(bytes: &[u8]) -> Result<(Vec<f64>, u32)> {
    let bad = |msg: &str| Error::Parse {
        line: 0,
        msg: format!("wav: {msg}"),
    };
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(bad("short fmt chunk"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = pos + 8 + size + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| bad("missing fmt chunk"))?;
    if format != 1 || bits != 16 {
        return Err(bad("only 16-bit PCM supported"));
    }
    if channels != 1 {
        return Err(bad("only mono supported"));
    }
    check_rate(rate)?;
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok((samples, rate))
}

/// Write mono 16-bit PCM WAV. Amplitudes are clamped to `[-1, 1]` and
/// scaled by 32767.
pub fn write_wav(path: &Path, samples: &[f64], rate: u32) -> Result<()> {
    check_rate(rate)?;
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}
