use std::collections::{HashMap, VecDeque};

use super::{EventKind, MidiError, MidiFile, DEFAULT_TEMPO_US};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset_ticks: u64,
    pub duration_ticks: u64,
    pub channel: u8,
}

/// Tempo changes keyed by absolute tick.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TempoMap {
    entries: Vec<(u64, u32)>,
}

impl TempoMap {
    /// Builds a map from `(tick, µs per quarter)` pairs in any order. Later entries
    /// win on equal ticks; tick 0 falls back to 120 BPM when nothing covers it.
    pub fn from_changes(mut changes: Vec<(u64, u32)>) -> Self {
        changes.sort_by_key(|(tick, _)| *tick);
        let mut entries: Vec<(u64, u32)> = Vec::with_capacity(changes.len() + 1);
        for (tick, us) in changes {
            match entries.last_mut() {
                Some(last) if last.0 == tick => last.1 = us,
                _ => entries.push((tick, us)),
            }
        }
        if entries.first().is_none_or(|(tick, _)| *tick > 0) {
            entries.insert(0, (0, DEFAULT_TEMPO_US));
        }
        Self { entries }
    }

    pub fn entries(&self) -> &[(u64, u32)] {
        &self.entries
    }

    /// Microseconds per quarter note in effect at `tick`.
    pub fn tempo_at(&self, tick: u64) -> u32 {
        let idx = self.entries.partition_point(|(t, _)| *t <= tick);
        self.entries[idx.saturating_sub(1)].1
    }

    pub fn bpm_at(&self, tick: u64) -> f64 {
        60_000_000.0 / f64::from(self.tempo_at(tick))
    }
}

impl Default for TempoMap {
    fn default() -> Self {
        Self::from_changes(Vec::new())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSignature {
    pub tick: u64,
    pub numerator: u8,
    pub denominator_pow: u8,
}

impl TimeSignature {
    /// Bar length in quarter notes, e.g. 3.0 for 6/8.
    pub fn beats_per_bar(&self) -> f64 {
        f64::from(self.numerator) * 4.0 / f64::from(1u32 << self.denominator_pow.min(31))
    }
}

/// Time-signature events across all tracks, ordered by tick.
pub fn time_signatures(file: &MidiFile) -> Vec<TimeSignature> {
    let mut out = Vec::new();
    for track in &file.tracks {
        let mut tick = 0u64;
        for ev in &track.events {
            tick += u64::from(ev.delta);
            if let EventKind::TimeSignature { numerator, denominator_pow, .. } = ev.kind {
                out.push(TimeSignature { tick, numerator, denominator_pow });
            }
        }
    }
    out.sort_by_key(|ts| ts.tick);
    out
}

/// Pairs note-ons with note-offs (first on, first off per channel and key) and
/// merges tempo changes from every track.
///
/// Notes still open when their track ends are closed there. Pairs that would have
/// zero length are dropped.
pub fn extract_notes(file: &MidiFile) -> Result<(Vec<NoteEvent>, TempoMap), MidiError> {
    let mut notes = Vec::new();
    let mut tempo = Vec::new();
    for track in &file.tracks {
        let mut tick = 0u64;
        let mut open: HashMap<(u8, u8), VecDeque<u64>> = HashMap::new();
        let mut close = |channel: u8, key: u8, onset: u64, end: u64| {
            if end > onset {
                notes.push(NoteEvent { pitch: key, onset_ticks: onset, duration_ticks: end - onset, channel });
            }
        };
        for ev in &track.events {
            tick += u64::from(ev.delta);
            match ev.kind {
                EventKind::NoteOn { channel, key, .. } => open.entry((channel, key)).or_default().push_back(tick),
                EventKind::NoteOff { channel, key, .. } => {
                    if let Some(onset) = open.get_mut(&(channel, key)).and_then(VecDeque::pop_front) {
                        close(channel, key, onset, tick);
                    }
                }
                EventKind::Tempo(us) => tempo.push((tick, us)),
                _ => {}
            }
        }
        let mut rest: Vec<_> = open.into_iter().flat_map(|((c, k), q)| q.into_iter().map(move |t| (c, k, t))).collect();
        rest.sort_unstable();
        for (channel, key, onset) in rest {
            close(channel, key, onset, tick);
        }
    }
    if notes.is_empty() {
        return Err(MidiError::NoNotes);
    }
    notes.sort_by_key(|n| (n.onset_ticks, n.pitch, n.channel));
    Ok((notes, TempoMap::from_changes(tempo)))
}
