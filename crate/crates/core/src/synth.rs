//! Labelled synthetic melodies written as real SMF data.
//!
//! Label 1 ("human" stand-in): a bounded random walk over a diatonic scale, note
//! lengths from {½, 1, 2} quarters, every onset on the sixteenth grid.
//!
//! Label 0 ("machine" stand-in): chromatic leaps of up to a fifth either way,
//! continuous note lengths and jittered onsets that sit off the grid.
//!
//! Every melody is exactly eight bars of 4/4, monophonic and a pure function of
//! `(seed, label, index)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::midi_io::{EventKind, MidiFile, Track, TrackEvent};
use crate::par::{self, Execution};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_label0: usize,
    pub n_label1: usize,
    pub bars: usize,
    pub ppq: u16,
    /// Inclusive tempo range in BPM.
    pub bpm_range: (u32, u32),
    /// Maximum onset displacement for label 0, in quarter notes.
    pub jitter_beats: f64,
    /// Pitch classes of the label-1 scale.
    pub scale: Vec<u8>,
    pub label1_durations: Vec<f64>,
    pub label0_duration_range: (f64, f64),
    /// Inclusive pitch range for both labels.
    pub pitch_range: (u8, u8),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_label0: 300,
            n_label1: 300,
            bars: 8,
            ppq: 480,
            bpm_range: (80, 160),
            jitter_beats: 0.07,
            scale: vec![0, 2, 4, 5, 7, 9, 11],
            label1_durations: vec![0.5, 1.0, 2.0],
            label0_duration_range: (0.2, 1.8),
            pitch_range: (55, 84),
        }
    }
}

impl SynthConfig {
    fn total_beats(&self) -> f64 {
        self.bars as f64 * 4.0
    }

    fn ticks(&self, beats: f64) -> u64 {
        (beats * f64::from(self.ppq)).round() as u64
    }
}

/// One generated file.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub label: u8,
    pub index: usize,
    pub bpm: u32,
    pub file: MidiFile,
}

/// `(pitch, on_tick, off_tick)`.
type Note = (u8, u64, u64);

fn bpm(config: &SynthConfig, rng: &mut ChaCha8Rng) -> u32 {
    let (lo, hi) = config.bpm_range;
    rng.random_range(lo.min(hi)..=hi.max(lo))
}

fn reflect(value: i32, lo: i32, hi: i32) -> i32 {
    if value < lo {
        (2 * lo - value).min(hi)
    } else if value > hi {
        (2 * hi - value).max(lo)
    } else {
        value
    }
}

pub fn gen_label1(config: &SynthConfig, index: usize) -> Generated {
    let mut rng = seed::rng(config.seed, "label1", index as u64);
    let bpm = bpm(config, &mut rng);
    let (lo, hi) = config.pitch_range;
    let scale: Vec<u8> = (lo..=hi).filter(|p| config.scale.contains(&(p % 12))).collect();
    let top = scale.len() as i32 - 1;
    let mut degree = rng.random_range(top / 4..=3 * top / 4);
    let total = config.total_beats();

    let mut notes: Vec<Note> = Vec::new();
    let mut t = 0.0;
    while t < total {
        let d = config.label1_durations[rng.random_range(0..config.label1_durations.len())].min(total - t);
        notes.push((scale[degree as usize], config.ticks(t), config.ticks(t + d)));
        t += d;
        degree = reflect(degree + rng.random_range(-2..=2), 0, top);
    }
    Generated { label: 1, index, bpm, file: build_file(&notes, bpm, config.ppq, index % 2 == 1) }
}

pub fn gen_label0(config: &SynthConfig, index: usize) -> Generated {
    let mut rng = seed::rng(config.seed, "label0", index as u64);
    let bpm = bpm(config, &mut rng);
    let (lo, hi) = (i32::from(config.pitch_range.0), i32::from(config.pitch_range.1));
    let total = config.total_beats();
    let (dmin, dmax) = config.label0_duration_range;

    let mut onsets = Vec::new();
    let mut t = 0.0;
    while t + dmin <= total {
        let jitter = if config.jitter_beats > 0.0 {
            rng.random_range(-config.jitter_beats..=config.jitter_beats)
        } else {
            0.0
        };
        onsets.push((t + jitter).clamp(0.0, total));
        t += rng.random_range(dmin..=dmax);
    }
    let mut ticks: Vec<u64> = onsets.iter().map(|&o| config.ticks(o)).collect();
    ticks.dedup();
    let end = config.ticks(total);
    ticks.retain(|&tk| tk < end);

    let mut pitch = rng.random_range(lo..=hi);
    let mut notes: Vec<Note> = Vec::with_capacity(ticks.len());
    for (i, &on) in ticks.iter().enumerate() {
        let off = ticks.get(i + 1).copied().unwrap_or(end);
        notes.push((pitch as u8, on, off));
        pitch = reflect(pitch + rng.random_range(-7..=7), lo, hi);
    }
    Generated { label: 0, index, bpm, file: build_file(&notes, bpm, config.ppq, index % 2 == 1) }
}

/// Assembles a 4/4 file; `multi_track` puts the notes on a second track after a
/// tempo/meter track (format 1).
fn build_file(notes: &[Note], bpm: u32, ppq: u16, multi_track: bool) -> MidiFile {
    let mut meta = vec![
        TrackEvent::new(0, EventKind::Tempo(60_000_000 / bpm)),
        TrackEvent::new(
            0,
            EventKind::TimeSignature { numerator: 4, denominator_pow: 2, clocks_per_click: 24, thirty_seconds_per_quarter: 8 },
        ),
    ];
    // Note-offs sort before note-ons at the same tick.
    let mut timed: Vec<(u64, u8, EventKind)> = Vec::with_capacity(notes.len() * 2);
    for &(key, on, off) in notes {
        timed.push((on, 1, EventKind::NoteOn { channel: 0, key, velocity: 90 }));
        timed.push((off, 0, EventKind::NoteOff { channel: 0, key, velocity: 0 }));
    }
    timed.sort_by_key(|(tick, order, _)| (*tick, *order));
    let mut note_events = Vec::with_capacity(timed.len() + 1);
    let mut last = 0;
    for (tick, _, kind) in timed {
        note_events.push(TrackEvent::new((tick - last) as u32, kind));
        last = tick;
    }
    note_events.push(TrackEvent::new(0, EventKind::EndOfTrack));

    if multi_track {
        meta.push(TrackEvent::new(0, EventKind::EndOfTrack));
        MidiFile { format: 1, ppq, tracks: vec![Track { events: meta }, Track { events: note_events }] }
    } else {
        meta.extend(note_events);
        MidiFile { format: 0, ppq, tracks: vec![Track { events: meta }] }
    }
}

/// Every file of the corpus: label 0 first, then label 1, each by index.
pub fn generate(config: &SynthConfig, exec: Execution) -> Vec<Generated> {
    let jobs: Vec<(u8, usize)> = (0..config.n_label0)
        .map(|i| (0, i))
        .chain((0..config.n_label1).map(|i| (1, i)))
        .collect();
    par::map_indexed(exec, &jobs, |_, &(label, index)| {
        if label == 0 {
            gen_label0(config, index)
        } else {
            gen_label1(config, index)
        }
    })
}
