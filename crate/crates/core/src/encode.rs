//! One-hot encoding of feature rows and batch padding.
//!
//! Each step is the concatenation `one_hot(pitch) ⧺ one_hot(position) ⧺ one_hot(duration)`,
//! so a real step has exactly three ones. Steps are stored as their three column
//! indices; [`EncodedSequence::to_dense`] expands them.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::preprocess::{on_grid, FeatureRow, MelodySequence};

pub const VOCAB_VERSION: u32 = 1;
/// The pitch block always covers every MIDI note number.
pub const PITCHES: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("position {position} is not a grid multiple inside the bar")]
    UnknownPosition { position: f64 },
    #[error("vocabulary file: {0}")]
    BadVocabulary(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabularies {
    pub grid_step: f64,
    pub beats_per_bar: f64,
    /// Positions are `0, step, 2·step, …` below `beats_per_bar`.
    pub position_count: usize,
    /// In-vocabulary durations in grid steps, ascending. The out-of-vocabulary
    /// token follows them.
    pub duration_units: Vec<u64>,
    /// Longest training sequence; every batch is padded to this length.
    pub max_len: usize,
}

fn grid_units(x: f64, step: f64) -> Option<u64> {
    (x >= 0.0 && on_grid(x, step)).then(|| (x / step).round() as u64)
}

pub fn build_vocab(corpus: &[MelodySequence], grid_step: f64, beats_per_bar: f64) -> Result<Vocabularies, EncodeError> {
    if corpus.is_empty() {
        return Err(EncodeError::EmptyCorpus);
    }
    let mut duration_units: Vec<u64> = corpus
        .iter()
        .flat_map(|s| &s.rows)
        .filter_map(|r| grid_units(r.duration, grid_step))
        .collect();
    duration_units.sort_unstable();
    duration_units.dedup();
    Ok(Vocabularies {
        grid_step,
        beats_per_bar,
        position_count: (beats_per_bar / grid_step - 1e-9).ceil() as usize,
        duration_units,
        max_len: corpus.iter().map(|s| s.rows.len()).max().unwrap_or(0),
    })
}

/// A row recovered from its one-hot indices. `duration` is `None` for the
/// out-of-vocabulary token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedRow {
    pub pitch: u8,
    pub position: f64,
    pub duration: Option<f64>,
}

impl Vocabularies {
    pub fn pitch_len(&self) -> usize {
        PITCHES
    }

    pub fn position_len(&self) -> usize {
        self.position_count
    }

    /// In-vocabulary durations plus the OOV token.
    pub fn duration_len(&self) -> usize {
        self.duration_units.len() + 1
    }

    pub fn oov_index(&self) -> usize {
        PITCHES + self.position_count + self.duration_units.len()
    }

    pub fn dim(&self) -> usize {
        PITCHES + self.position_count + self.duration_len()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.position_count).map(|k| k as f64 * self.grid_step).collect()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.duration_units.iter().map(|&u| u as f64 * self.grid_step).collect()
    }

    pub fn encode_row(&self, row: &FeatureRow) -> Result<[usize; 3], EncodeError> {
        let pos = grid_units(row.position, self.grid_step)
            .map(|u| u as usize)
            .filter(|&u| u < self.position_count)
            .ok_or(EncodeError::UnknownPosition { position: row.position })?;
        let dur = grid_units(row.duration, self.grid_step)
            .and_then(|u| self.duration_units.binary_search(&u).ok())
            .unwrap_or(self.duration_units.len());
        Ok([usize::from(row.pitch), PITCHES + pos, PITCHES + self.position_count + dur])
    }

    pub fn decode_step(&self, step: [usize; 3]) -> Option<DecodedRow> {
        let [p, b, d] = step;
        let pos_start = PITCHES;
        let dur_start = PITCHES + self.position_count;
        if p >= PITCHES || !(pos_start..dur_start).contains(&b) || !(dur_start..self.dim()).contains(&d) {
            return None;
        }
        Some(DecodedRow {
            pitch: p as u8,
            position: (b - pos_start) as f64 * self.grid_step,
            duration: self.duration_units.get(d - dur_start).map(|&u| u as f64 * self.grid_step),
        })
    }

    pub fn to_file(&self) -> VocabFile {
        let mut durations: Vec<Option<f64>> = self.durations().into_iter().map(Some).collect();
        durations.push(None);
        VocabFile {
            version: VOCAB_VERSION,
            grid_step: self.grid_step,
            beats_per_bar: self.beats_per_bar,
            pitch: (0..=127).collect(),
            positions: self.positions(),
            durations,
            max_len: self.max_len,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EncodeError> {
        let file: VocabFile = serde_json::from_str(text).map_err(|e| EncodeError::BadVocabulary(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn from_file(file: &VocabFile) -> Result<Self, EncodeError> {
        let bad = |m: &str| Err(EncodeError::BadVocabulary(m.to_string()));
        if file.version != VOCAB_VERSION {
            return bad(&format!("version {} (expected {VOCAB_VERSION})", file.version));
        }
        if !(file.grid_step > 0.0 && file.grid_step.is_finite()) || file.beats_per_bar.is_nan() || file.beats_per_bar <= 0.0 {
            return bad("grid_step and beats_per_bar must be positive");
        }
        if file.pitch != (0..=127).collect::<Vec<u8>>() {
            return bad("pitch tokens must be 0..=127");
        }
        let Some((None, known)) = file.durations.split_last() else {
            return bad("durations must end with the null OOV token");
        };
        let mut duration_units = Vec::with_capacity(known.len());
        for d in known {
            match d.and_then(|d| grid_units(d, file.grid_step)) {
                Some(u) if duration_units.last().is_none_or(|&l| u > l) => duration_units.push(u),
                _ => return bad("durations must be ascending grid multiples"),
            }
        }
        let vocab = Vocabularies {
            grid_step: file.grid_step,
            beats_per_bar: file.beats_per_bar,
            position_count: file.positions.len(),
            duration_units,
            max_len: file.max_len,
        };
        if vocab.positions() != file.positions {
            return bad("positions must be consecutive grid multiples from 0");
        }
        Ok(vocab)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_file()).expect("vocabulary serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// On-disk form of [`Vocabularies`] (`vocab.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabFile {
    pub version: u32,
    pub grid_step: f64,
    pub beats_per_bar: f64,
    pub pitch: Vec<u8>,
    pub positions: Vec<f64>,
    /// Ends with `null`, the out-of-vocabulary duration token.
    pub durations: Vec<Option<f64>>,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    /// Column indices of the three ones in each real step.
    pub indices: Vec<[usize; 3]>,
    /// Total steps including all-zero padding.
    pub padded_len: usize,
    pub dim: usize,
    pub label: Option<u8>,
}

impl EncodedSequence {
    pub fn length(&self) -> usize {
        self.indices.len()
    }

    /// `None` for padding steps.
    pub fn step(&self, t: usize) -> Option<[usize; 3]> {
        self.indices.get(t).copied()
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.label = Some(label);
        self
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        (0..self.padded_len.max(self.length()))
            .map(|t| {
                let mut v = vec![0u8; self.dim];
                if let Some(ix) = self.step(t) {
                    for i in ix {
                        v[i] = 1;
                    }
                }
                v
            })
            .collect()
    }
}

pub fn encode_sequence(seq: &MelodySequence, vocab: &Vocabularies) -> Result<EncodedSequence, EncodeError> {
    let indices = seq.rows.iter().map(|r| vocab.encode_row(r)).collect::<Result<Vec<_>, _>>()?;
    Ok(EncodedSequence { padded_len: indices.len(), indices, dim: vocab.dim(), label: None })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub sequences: Vec<EncodedSequence>,
    pub max_len: usize,
    /// Sequences that had to be cut to `max_len`.
    pub truncated: usize,
}

impl Batch {
    pub fn labels(&self) -> Vec<Option<u8>> {
        self.sequences.iter().map(|s| s.label).collect()
    }
}

/// Pads every sequence with all-zero steps to `max_len`, truncating longer ones.
pub fn pad_batch(seqs: Vec<EncodedSequence>, max_len: usize) -> Batch {
    let mut truncated = 0;
    let sequences = seqs
        .into_iter()
        .map(|mut s| {
            if s.length() > max_len {
                log::warn!("sequence of length {} truncated to {max_len}", s.length());
                s.indices.truncate(max_len);
                truncated += 1;
            }
            s.padded_len = max_len;
            s
        })
        .collect();
    Batch { sequences, max_len, truncated }
}
