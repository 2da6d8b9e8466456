//! Standard MIDI File reading and writing (format 0 and 1, PPQ time division).
//!
//! Input may use running status and note-on with velocity 0 as note-off; output is
//! canonical: explicit status on every event, note-offs as `0x80`, minimal-length
//! delta-time VLQs.

mod notes;
mod read;
mod vlq;
mod write;

pub use notes::{extract_notes, time_signatures, NoteEvent, TempoMap, TimeSignature};
pub use read::{parse_smf, parse_smf_with_warnings, ParseWarning};
pub use vlq::{read_vlq, write_vlq, VLQ_MAX};
pub use write::write_smf;

use thiserror::Error;

/// Tempo assumed when a file has no tempo event: 120 BPM.
pub const DEFAULT_TEMPO_US: u32 = 500_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MidiError {
    #[error("not a standard MIDI file (missing MThd)")]
    BadMagic,
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("SMPTE time division is not supported")]
    SmpteTimeDivision,
    #[error("truncated chunk: {0}")]
    TruncatedChunk(String),
    #[error("input ended inside a variable-length quantity")]
    TruncatedInput,
    #[error("variable-length quantity longer than 4 bytes at offset {0}")]
    UnterminatedVlq(usize),
    #[error("data byte {byte:#04x} without a running status at offset {offset}")]
    MissingStatus { byte: u8, offset: usize },
    #[error("unexpected status byte {status:#04x} at offset {offset}")]
    InvalidStatus { status: u8, offset: usize },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("file contains no notes")]
    NoNotes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiFile {
    pub format: u16,
    /// Ticks per quarter note.
    pub ppq: u16,
    pub tracks: Vec<Track>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Track {
    pub events: Vec<TrackEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackEvent {
    /// Ticks since the previous event in the same track.
    pub delta: u32,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    NoteOff { channel: u8, key: u8, velocity: u8 },
    /// Velocity is always non-zero; zero-velocity note-ons are read as `NoteOff`.
    NoteOn { channel: u8, key: u8, velocity: u8 },
    /// Any other channel voice message. `status` includes the channel nibble.
    Channel { status: u8, data: Vec<u8> },
    /// Microseconds per quarter note.
    Tempo(u32),
    TimeSignature {
        numerator: u8,
        denominator_pow: u8,
        clocks_per_click: u8,
        thirty_seconds_per_quarter: u8,
    },
    EndOfTrack,
    /// Meta event kept as an opaque payload.
    Meta { kind: u8, data: Vec<u8> },
    /// `status` is `0xF0` or `0xF7`.
    SysEx { status: u8, data: Vec<u8> },
}

impl TrackEvent {
    pub fn new(delta: u32, kind: EventKind) -> Self {
        Self { delta, kind }
    }
}

impl MidiFile {
    /// Checks the structural invariants that `write_smf` relies on.
    pub fn validate(&self) -> Result<(), MidiError> {
        let bad = |m: String| Err(MidiError::InvariantViolation(m));
        if self.format > 1 {
            return bad(format!("format {} not in {{0, 1}}", self.format));
        }
        if self.ppq == 0 || self.ppq >= 0x8000 {
            return bad(format!("ppq {} out of range", self.ppq));
        }
        if self.format == 0 && self.tracks.len() != 1 {
            return bad(format!("format 0 with {} tracks", self.tracks.len()));
        }
        if self.tracks.len() > usize::from(u16::MAX) {
            return bad("too many tracks".into());
        }
        for (ti, track) in self.tracks.iter().enumerate() {
            match track.events.last() {
                Some(TrackEvent { kind: EventKind::EndOfTrack, .. }) => {}
                _ => return bad(format!("track {ti} does not end with End-of-Track")),
            }
            for (ei, ev) in track.events.iter().enumerate() {
                if ev.delta > VLQ_MAX {
                    return bad(format!("track {ti} event {ei}: delta {} exceeds VLQ range", ev.delta));
                }
                if let Err(m) = ev.kind.check() {
                    return bad(format!("track {ti} event {ei}: {m}"));
                }
                if ev.kind == EventKind::EndOfTrack && ei + 1 != track.events.len() {
                    return bad(format!("track {ti}: End-of-Track before last event"));
                }
            }
        }
        Ok(())
    }
}

impl EventKind {
    fn check(&self) -> Result<(), String> {
        match self {
            EventKind::NoteOff { channel, key, velocity } | EventKind::NoteOn { channel, key, velocity } => {
                if *channel > 15 || *key > 127 || *velocity > 127 {
                    return Err("note field out of range".into());
                }
                if matches!(self, EventKind::NoteOn { velocity: 0, .. }) {
                    return Err("note-on with velocity 0".into());
                }
            }
            EventKind::Channel { status, data } => {
                let kind = status & 0xF0;
                if !(0xA0..=0xE0).contains(&kind) {
                    return Err(format!("status {status:#04x} is not a channel message"));
                }
                if data.len() != channel_data_len(*status) || data.iter().any(|b| *b > 0x7F) {
                    return Err("bad channel message data".into());
                }
            }
            EventKind::Tempo(us) => {
                if *us == 0 || *us > 0x00FF_FFFF {
                    return Err(format!("tempo {us} out of range"));
                }
            }
            EventKind::Meta { kind, data } => {
                if *kind > 0x7F || data.len() > VLQ_MAX as usize {
                    return Err("bad meta event".into());
                }
            }
            EventKind::SysEx { status, data } => {
                if !matches!(status, 0xF0 | 0xF7) || data.len() > VLQ_MAX as usize {
                    return Err("bad sysex event".into());
                }
            }
            EventKind::TimeSignature { .. } | EventKind::EndOfTrack => {}
        }
        Ok(())
    }
}

/// Number of data bytes following a channel status byte.
pub(crate) fn channel_data_len(status: u8) -> usize {
    match status & 0xF0 {
        0xC0 | 0xD0 => 1,
        _ => 2,
    }
}
