//! Manifest ingestion: tab-separated `wav_path  transcript  speaker_id`
//! lines, validated up front with per-line rejection reasons. Audio is
//! loaded lazily via the returned entries.

use std::path::{Path, PathBuf};

use crate::alphabet::{normalize_text, Alphabet};
use crate::audio::{read_wav, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub wav_path: PathBuf,
    /// Normalized, alphabet-clean transcript.
    pub transcript: String,
    pub speaker_id: String,
    pub utterance_id: String,
}

#[derive(Debug, Clone)]
pub struct RejectedLine {
    pub line: usize,
    pub reason: &'static str,
    pub detail: String,
}

#[derive(Debug)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub rejected: Vec<RejectedLine>,
}

/// Parse and validate a manifest. Lines failing any check are collected
/// with a reason (`format`, `alphabet`, `io`); zero valid lines is fatal.
pub fn ingest_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    let mut rejected = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            rejected.push(RejectedLine {
                line: line_no,
                reason: "format",
                detail: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
            continue;
        }
        let transcript = normalize_text(fields[1]);
        if transcript.is_empty() || !Alphabet.is_clean(&transcript) {
            rejected.push(RejectedLine {
                line: line_no,
                reason: "alphabet",
                detail: format!("transcript {:?} is not alphabet-clean", fields[1]),
            });
            continue;
        }
        let wav_path = PathBuf::from(fields[0]);
        if let Err(e) = read_wav(&wav_path) {
            rejected.push(RejectedLine {
                line: line_no,
                reason: "io",
                detail: e.to_string(),
            });
            continue;
        }
        let stem = wav_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("line{line_no}"));
        entries.push(ManifestEntry {
            wav_path,
            transcript,
            speaker_id: fields[2].trim().to_owned(),
            utterance_id: format!("{stem}-{line_no:04}"),
        });
    }

    if entries.is_empty() {
        return Err(Error::NoData(format!(
            "manifest {} has no valid lines ({} rejected)",
            path.display(),
            rejected.len()
        )));
    }
    Ok(Manifest { entries, rejected })
}

/// Load the audio behind one manifest entry.
pub fn load_utterance(entry: &ManifestEntry) -> Result<Utterance> {
    let (samples, rate) = read_wav(&entry.wav_path)?;
    Ok(
        Utterance::new(samples, rate, &entry.transcript, &entry.utterance_id)
            .with_speaker(&entry.speaker_id),
    )
}
