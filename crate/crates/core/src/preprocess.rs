//! Tick-domain notes to per-bar feature rows.
//!
//! The steps are: exact tick-to-beat conversion, monophony enforcement, snapping
//! onsets and durations to a grid, then laying the first eight bars out as
//! `(pitch, position-in-bar, duration)` rows. Positions and durations are in
//! quarter notes, position 0.0 being the bar's downbeat.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::midi_io::{self, MidiError, MidiFile, NoteEvent, ParseWarning};

/// Sixteenth-note grid, in quarter notes.
pub const DEFAULT_GRID: f64 = 0.25;
/// Melody length in bars.
pub const BARS: usize = 8;
/// Snapping step when musical quantization is disabled: one tick at 480 PPQ.
pub const TICK_STEP: f64 = 1.0 / 480.0;

const EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error("no notes left after monophony enforcement")]
    EmptyAfterEnforcement,
    #[error("melody ends at beat {end}, shorter than one bar of {beats_per_bar} beats")]
    TooShort { end: f64, beats_per_bar: f64 },
    #[error("file changes meter ({0:?} beats per bar)")]
    MixedMeter(Vec<f64>),
    #[error("grid step must be positive and finite, got {0}")]
    InvalidGrid(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatNote {
    pub pitch: u8,
    pub onset: f64,
    pub duration: f64,
}

/// One row of a bar's feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub bar: usize,
    pub pitch: u8,
    /// Offset from the bar's downbeat, in quarter notes.
    pub position: f64,
    /// Length in quarter notes.
    pub duration: f64,
}

impl FeatureRow {
    pub fn onset(&self, beats_per_bar: f64) -> f64 {
        self.bar as f64 * beats_per_bar + self.position
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelodySequence {
    pub source_id: String,
    pub beats_per_bar: f64,
    /// Bars touched by the melody, at most [`BARS`].
    pub bars: usize,
    /// Set when the melody ends before the final bar line.
    pub short: bool,
    pub rows: Vec<FeatureRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PreprocessWarning {
    Parse(ParseWarning),
    /// Notes starting after the last bar were discarded.
    TruncatedBars { dropped: usize },
}

impl std::fmt::Display for PreprocessWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PreprocessWarning::Parse(w) => w.fmt(f),
            PreprocessWarning::TruncatedBars { dropped } => {
                write!(f, "{dropped} notes beyond bar {BARS} discarded")
            }
        }
    }
}

pub fn to_beats(notes: &[NoteEvent], ppq: u16) -> Vec<BeatNote> {
    let ppq = f64::from(ppq);
    notes
        .iter()
        .map(|n| BeatNote {
            pitch: n.pitch,
            onset: n.onset_ticks as f64 / ppq,
            duration: n.duration_ticks as f64 / ppq,
        })
        .collect()
}

/// Truncates overlapping notes at the next onset; of notes sharing an onset only
/// the highest pitch survives.
pub fn enforce_monophony(notes: &[BeatNote]) -> Result<Vec<BeatNote>, PreprocessError> {
    let mut sorted = notes.to_vec();
    sorted.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    let mut out: Vec<BeatNote> = Vec::with_capacity(sorted.len());
    for note in sorted {
        if let Some(last) = out.last_mut() {
            if note.onset == last.onset {
                if note.pitch > last.pitch {
                    *last = note;
                }
                continue;
            }
            if last.onset + last.duration > note.onset + EPS * note.onset.abs().max(1.0) {
                last.duration = note.onset - last.onset;
            }
        }
        out.push(note);
    }
    out.retain(|n| n.duration > 0.0);
    if out.is_empty() {
        return Err(PreprocessError::EmptyAfterEnforcement);
    }
    Ok(out)
}

/// Nearest multiple of `step`, ties rounding up.
pub fn snap(x: f64, step: f64) -> f64 {
    (x / step + 0.5).floor() * step
}

/// Whether `x` sits on a multiple of `step`.
pub fn on_grid(x: f64, step: f64) -> bool {
    (x - (x / step).round() * step).abs() <= EPS * x.abs().max(1.0)
}

/// Snaps onsets and durations to the grid; durations never drop below one step.
pub fn quantize(notes: &[BeatNote], step: f64) -> Vec<BeatNote> {
    notes
        .iter()
        .map(|n| BeatNote {
            pitch: n.pitch,
            onset: snap(n.onset, step),
            duration: snap(n.duration, step).max(step),
        })
        .collect()
}

/// Lays quantized, monophonic notes out bar by bar, keeping the first [`BARS`] bars.
///
/// Returns the sequence and the number of notes discarded past the last bar.
pub fn segment_bars(
    notes: &[BeatNote],
    beats_per_bar: f64,
    source_id: &str,
) -> Result<(MelodySequence, usize), PreprocessError> {
    let limit = BARS as f64 * beats_per_bar;
    let mut rows = Vec::with_capacity(notes.len());
    let mut dropped = 0;
    let mut end: f64 = 0.0;
    for n in notes {
        if n.onset >= limit - EPS {
            dropped += 1;
            continue;
        }
        let bar = ((n.onset / beats_per_bar) + EPS).floor().max(0.0) as usize;
        let position = (n.onset - bar as f64 * beats_per_bar).max(0.0);
        let duration = if n.onset + n.duration > limit { limit - n.onset } else { n.duration };
        end = end.max(n.onset + duration);
        rows.push(FeatureRow { bar, pitch: n.pitch, position, duration });
    }
    if end < beats_per_bar - EPS {
        return Err(PreprocessError::TooShort { end, beats_per_bar });
    }
    rows.sort_by(|a, b| a.bar.cmp(&b.bar).then(a.position.total_cmp(&b.position)));
    let bars = ((end / beats_per_bar) - EPS).ceil().clamp(1.0, BARS as f64) as usize;
    let seq = MelodySequence {
        source_id: source_id.to_string(),
        beats_per_bar,
        bars,
        short: end < limit - EPS,
        rows,
    };
    Ok((seq, dropped))
}

/// Bar length in quarter notes from the file's time signatures; 4/4 when absent.
pub fn beats_per_bar(file: &MidiFile) -> Result<f64, PreprocessError> {
    let mut values: Vec<f64> = Vec::new();
    for ts in midi_io::time_signatures(file) {
        let b = ts.beats_per_bar();
        if !values.contains(&b) {
            values.push(b);
        }
    }
    match values.len() {
        0 => Ok(4.0),
        1 => Ok(values[0]),
        _ => Err(PreprocessError::MixedMeter(values)),
    }
}

/// Display name with C4 = 60.
pub fn note_name(pitch: u8) -> String {
    const NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];
    format!("{}{}", NAMES[usize::from(pitch % 12)], i32::from(pitch / 12) - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    /// Snapping step for onsets and durations.
    pub step: f64,
    /// Musical grid against which grid occupancy is reported.
    pub occupancy_grid: f64,
}

impl PreprocessConfig {
    pub fn quantized(grid: f64) -> Self {
        Self { step: grid, occupancy_grid: grid }
    }

    /// Keeps events at tick resolution instead of the musical grid.
    pub fn unquantized(grid: f64) -> Self {
        Self { step: TICK_STEP, occupancy_grid: grid }
    }

    pub fn is_quantized(&self) -> bool {
        self.step == self.occupancy_grid
    }
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self::quantized(DEFAULT_GRID)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub sequence: MelodySequence,
    pub warnings: Vec<PreprocessWarning>,
    pub ppq: u16,
    pub bpm: f64,
    /// Rows whose onset lies on the occupancy grid.
    pub on_grid: usize,
}

/// Runs the full chain from SMF bytes to a feature sequence.
pub fn preprocess_midi(
    bytes: &[u8],
    source_id: &str,
    config: &PreprocessConfig,
) -> Result<Prepared, PreprocessError> {
    if !(config.step > 0.0 && config.step.is_finite()) {
        return Err(PreprocessError::InvalidGrid(config.step));
    }
    let (file, parse_warnings) = midi_io::parse_smf_with_warnings(bytes)?;
    let bpb = beats_per_bar(&file)?;
    let (notes, tempo) = midi_io::extract_notes(&file)?;
    let beats = to_beats(&notes, file.ppq);
    let mono = enforce_monophony(&beats)?;
    // Snapping can pull neighbouring notes together, so enforce monophony again.
    let snapped = enforce_monophony(&quantize(&mono, config.step))?;
    let (sequence, dropped) = segment_bars(&snapped, bpb, source_id)?;

    let mut warnings: Vec<PreprocessWarning> = parse_warnings.into_iter().map(PreprocessWarning::Parse).collect();
    if dropped > 0 {
        warnings.push(PreprocessWarning::TruncatedBars { dropped });
    }
    let on_grid = sequence
        .rows
        .iter()
        .filter(|r| on_grid(r.position, config.occupancy_grid))
        .count();
    Ok(Prepared {
        sequence,
        warnings,
        ppq: file.ppq,
        bpm: tempo.bpm_at(0),
        on_grid,
    })
}
