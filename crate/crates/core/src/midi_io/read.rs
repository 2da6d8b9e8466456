use std::collections::{HashMap, VecDeque};

use super::vlq::read_vlq;
use super::{channel_data_len, EventKind, MidiError, MidiFile, Track, TrackEvent};

/// Non-fatal problems found while parsing. Each one was repaired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    /// A note-on never matched by a note-off; closed at End-of-Track.
    DanglingNoteOn { track: usize, channel: u8, key: u8, tick: u64 },
    /// The chunk ended without an End-of-Track event; one was appended.
    MissingEndOfTrack { track: usize },
}

impl std::fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseWarning::DanglingNoteOn { track, channel, key, tick } => write!(
                f,
                "track {track}: note-on key {key} channel {channel} at tick {tick} never released; closed at end of track"
            ),
            ParseWarning::MissingEndOfTrack { track } => {
                write!(f, "track {track}: missing End-of-Track, appended")
            }
        }
    }
}

pub fn parse_smf(bytes: &[u8]) -> Result<MidiFile, MidiError> {
    parse_smf_with_warnings(bytes).map(|(f, _)| f)
}

pub fn parse_smf_with_warnings(bytes: &[u8]) -> Result<(MidiFile, Vec<ParseWarning>), MidiError> {
    if bytes.len() < 4 || &bytes[..4] != b"MThd" {
        return Err(MidiError::BadMagic);
    }
    let (header, mut pos) = chunk(bytes, 0)?;
    if header.len() < 6 {
        return Err(MidiError::TruncatedChunk("MThd shorter than 6 bytes".into()));
    }
    let format = u16::from_be_bytes([header[0], header[1]]);
    let ntracks = usize::from(u16::from_be_bytes([header[2], header[3]]));
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::SmpteTimeDivision);
    }
    if division == 0 {
        return Err(MidiError::InvariantViolation("ppq is 0".into()));
    }

    let mut tracks = Vec::with_capacity(ntracks);
    let mut warnings = Vec::new();
    while tracks.len() < ntracks {
        if pos >= bytes.len() {
            return Err(MidiError::TruncatedChunk(format!(
                "expected {ntracks} tracks, found {}",
                tracks.len()
            )));
        }
        let id = bytes.get(pos..pos + 4).ok_or_else(|| MidiError::TruncatedChunk("chunk id".into()))?;
        let is_track = id == b"MTrk";
        let (body, next) = chunk(bytes, pos)?;
        pos = next;
        // Unknown chunk types are skipped.
        if is_track {
            let index = tracks.len();
            tracks.push(parse_track(body, pos - body.len(), index, &mut warnings)?);
        }
    }
    Ok((MidiFile { format, ppq: division, tracks }, warnings))
}

/// Returns the body of the chunk starting at `pos` and the offset after it.
fn chunk(bytes: &[u8], pos: usize) -> Result<(&[u8], usize), MidiError> {
    let head = bytes
        .get(pos..pos + 8)
        .ok_or_else(|| MidiError::TruncatedChunk(format!("chunk header at offset {pos}")))?;
    let len = u32::from_be_bytes([head[4], head[5], head[6], head[7]]) as usize;
    let start = pos + 8;
    let body = bytes.get(start..start + len).ok_or_else(|| {
        MidiError::TruncatedChunk(format!(
            "{} declares {len} bytes, {} available",
            String::from_utf8_lossy(&head[..4]),
            bytes.len() - start
        ))
    })?;
    Ok((body, start + len))
}

fn byte_at(body: &[u8], i: usize, base: usize) -> Result<u8, MidiError> {
    body.get(i)
        .copied()
        .ok_or_else(|| MidiError::TruncatedChunk(format!("event data at offset {}", base + i)))
}

fn parse_track(
    body: &[u8],
    base: usize,
    index: usize,
    warnings: &mut Vec<ParseWarning>,
) -> Result<Track, MidiError> {
    let mut events = Vec::new();
    let mut i = 0;
    let mut running: Option<u8> = None;
    let mut tick: u64 = 0;
    let mut open: HashMap<(u8, u8), VecDeque<u64>> = HashMap::new();
    let mut ended = false;

    while i < body.len() {
        let (delta, next) = read_vlq(body, i).map_err(|e| match e {
            MidiError::TruncatedInput => MidiError::TruncatedChunk(format!("delta-time at offset {}", base + i)),
            MidiError::UnterminatedVlq(o) => MidiError::UnterminatedVlq(base + o),
            other => other,
        })?;
        i = next;
        tick += u64::from(delta);
        let first = byte_at(body, i, base)?;
        let kind = match first {
            0xFF => {
                let kind = byte_at(body, i + 1, base)?;
                let (len, next) = read_vlq(body, i + 2).map_err(|_| MidiError::TruncatedChunk(format!("meta length at offset {}", base + i)))?;
                let data = body
                    .get(next..next + len as usize)
                    .ok_or_else(|| MidiError::TruncatedChunk(format!("meta payload at offset {}", base + next)))?;
                i = next + len as usize;
                meta_event(kind, data)
            }
            0xF0 | 0xF7 => {
                let (len, next) = read_vlq(body, i + 1).map_err(|_| MidiError::TruncatedChunk(format!("sysex length at offset {}", base + i)))?;
                let data = body
                    .get(next..next + len as usize)
                    .ok_or_else(|| MidiError::TruncatedChunk(format!("sysex payload at offset {}", base + next)))?;
                i = next + len as usize;
                EventKind::SysEx { status: first, data: data.to_vec() }
            }
            0xF1..=0xFE => return Err(MidiError::InvalidStatus { status: first, offset: base + i }),
            _ => {
                let status = if first & 0x80 != 0 {
                    i += 1;
                    running = Some(first);
                    first
                } else {
                    running.ok_or(MidiError::MissingStatus { byte: first, offset: base + i })?
                };
                let n = channel_data_len(status);
                let mut data = [0u8; 2];
                for (k, slot) in data.iter_mut().take(n).enumerate() {
                    let b = byte_at(body, i + k, base)?;
                    if b & 0x80 != 0 {
                        return Err(MidiError::InvalidStatus { status: b, offset: base + i + k });
                    }
                    *slot = b;
                }
                i += n;
                channel_event(status, &data[..n])
            }
        };

        match kind {
            EventKind::NoteOn { channel, key, .. } => {
                open.entry((channel, key)).or_default().push_back(tick);
            }
            EventKind::NoteOff { channel, key, .. } => {
                if let Some(q) = open.get_mut(&(channel, key)) {
                    q.pop_front();
                }
            }
            EventKind::EndOfTrack => {
                let delta = close_dangling(&mut events, &mut open, delta, index, warnings);
                events.push(TrackEvent::new(delta, kind));
                ended = true;
                break;
            }
            _ => {}
        }
        events.push(TrackEvent::new(delta, kind));
    }

    if !ended {
        warnings.push(ParseWarning::MissingEndOfTrack { track: index });
        close_dangling(&mut events, &mut open, 0, index, warnings);
        events.push(TrackEvent::new(0, EventKind::EndOfTrack));
    }
    Ok(Track { events })
}

/// Inserts note-offs for every still-open note, in the order the notes began, so
/// that they end at the End-of-Track tick. `eot_delta` is the End-of-Track event's
/// delta; the returned value is the delta that event must carry afterwards.
fn close_dangling(
    events: &mut Vec<TrackEvent>,
    open: &mut HashMap<(u8, u8), VecDeque<u64>>,
    eot_delta: u32,
    track: usize,
    warnings: &mut Vec<ParseWarning>,
) -> u32 {
    let mut pending: Vec<(u64, u8, u8)> = open
        .drain()
        .flat_map(|((channel, key), q)| q.into_iter().map(move |t| (t, channel, key)))
        .collect();
    if pending.is_empty() {
        return eot_delta;
    }
    pending.sort_unstable();
    let mut delta = eot_delta;
    for (tick, channel, key) in pending {
        warnings.push(ParseWarning::DanglingNoteOn { track, channel, key, tick });
        events.push(TrackEvent::new(delta, EventKind::NoteOff { channel, key, velocity: 0 }));
        delta = 0;
    }
    0
}

fn meta_event(kind: u8, data: &[u8]) -> EventKind {
    match (kind, data.len()) {
        (0x2F, 0) => EventKind::EndOfTrack,
        (0x51, 3) => {
            let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
            if us == 0 {
                EventKind::Meta { kind, data: data.to_vec() }
            } else {
                EventKind::Tempo(us)
            }
        }
        (0x58, 4) => EventKind::TimeSignature {
            numerator: data[0],
            denominator_pow: data[1],
            clocks_per_click: data[2],
            thirty_seconds_per_quarter: data[3],
        },
        _ => EventKind::Meta { kind, data: data.to_vec() },
    }
}

fn channel_event(status: u8, data: &[u8]) -> EventKind {
    let channel = status & 0x0F;
    match status & 0xF0 {
        0x80 => EventKind::NoteOff { channel, key: data[0], velocity: data[1] },
        0x90 if data[1] == 0 => EventKind::NoteOff { channel, key: data[0], velocity: 0 },
        0x90 => EventKind::NoteOn { channel, key: data[0], velocity: data[1] },
        _ => EventKind::Channel { status, data: data.to_vec() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi_io::{extract_notes, write_smf, EventKind, MidiError, MidiFile, Track, TrackEvent};
    use proptest::prelude::*;

    fn smf(format: u16, ppq: u16, tracks: &[&[u8]]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend(6u32.to_be_bytes());
        out.extend(format.to_be_bytes());
        out.extend((tracks.len() as u16).to_be_bytes());
        out.extend(ppq.to_be_bytes());
        for t in tracks {
            out.extend(b"MTrk");
            out.extend((t.len() as u32).to_be_bytes());
            out.extend(*t);
        }
        out
    }

    const EOT: [u8; 4] = [0x00, 0xFF, 0x2F, 0x00];

    #[test]
    fn minimal_file() {
        let bytes = smf(0, 480, &[&EOT]);
        let f = parse_smf(&bytes).unwrap();
        assert_eq!((f.format, f.ppq, f.tracks.len()), (0, 480, 1));
        assert_eq!(f.tracks[0].events, vec![TrackEvent::new(0, EventKind::EndOfTrack)]);
        assert_eq!(write_smf(&f).unwrap(), bytes);
        assert_eq!(bytes.len(), 14 + 8 + 4);
        assert!(matches!(extract_notes(&f), Err(MidiError::NoNotes)));
    }

    #[test]
    fn rejects_bad_headers() {
        let mut riff = smf(0, 480, &[&EOT]);
        riff[..4].copy_from_slice(b"RIFF");
        assert_eq!(parse_smf(&riff), Err(MidiError::BadMagic));
        assert_eq!(parse_smf(&smf(2, 480, &[&EOT])), Err(MidiError::UnsupportedFormat(2)));
        assert_eq!(parse_smf(&smf(0, 0xE728, &[&EOT])), Err(MidiError::SmpteTimeDivision));
        let full = smf(0, 480, &[&EOT]);
        assert!(matches!(parse_smf(&full[..full.len() - 2]), Err(MidiError::TruncatedChunk(_))));
    }

    #[test]
    fn single_note_is_canonical() {
        let f = MidiFile {
            format: 0,
            ppq: 480,
            tracks: vec![Track {
                events: vec![
                    TrackEvent::new(0, EventKind::NoteOn { channel: 0, key: 60, velocity: 100 }),
                    TrackEvent::new(480, EventKind::NoteOff { channel: 0, key: 60, velocity: 0 }),
                    TrackEvent::new(0, EventKind::EndOfTrack),
                ],
            }],
        };
        let bytes = write_smf(&f).unwrap();
        assert_eq!(&bytes[22..], &[0x00, 0x90, 60, 100, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xFF, 0x2F, 0x00]);
        assert_eq!(parse_smf(&bytes).unwrap(), f);
    }

    #[test]
    fn running_status_and_zero_velocity() {
        // Note-on C4, then (running status) C4 velocity 0, E4 on, E4 velocity 0.
        let track = [0x00, 0x90, 60, 90, 0x83, 0x60, 60, 0, 0x00, 64, 90, 0x81, 0x70, 64, 0, 0x00, 0xFF, 0x2F, 0x00];
        let f = parse_smf(&smf(0, 480, &[&track])).unwrap();
        let kinds: Vec<_> = f.tracks[0].events.iter().map(|e| e.kind.clone()).collect();
        assert_eq!(
            kinds[..4],
            [
                EventKind::NoteOn { channel: 0, key: 60, velocity: 90 },
                EventKind::NoteOff { channel: 0, key: 60, velocity: 0 },
                EventKind::NoteOn { channel: 0, key: 64, velocity: 90 },
                EventKind::NoteOff { channel: 0, key: 64, velocity: 0 },
            ]
        );
        let (notes, tempo) = extract_notes(&f).unwrap();
        assert_eq!(notes.len(), 2);
        assert_eq!((notes[1].pitch, notes[1].onset_ticks, notes[1].duration_ticks), (64, 480, 240));
        assert_eq!(tempo.entries(), &[(0, 500_000)]);
    }

    #[test]
    fn data_byte_without_status_is_an_error() {
        let track = [0x00, 60, 90, 0x00, 0xFF, 0x2F, 0x00];
        assert!(matches!(parse_smf(&smf(0, 480, &[&track])), Err(MidiError::MissingStatus { .. })));
    }

    #[test]
    fn dangling_note_is_closed_at_end_of_track() {
        let track = [0x00, 0x90, 62, 80, 0x83, 0x60, 0xFF, 0x2F, 0x00];
        let (f, warnings) = parse_smf_with_warnings(&smf(0, 480, &[&track])).unwrap();
        assert_eq!(warnings, vec![ParseWarning::DanglingNoteOn { track: 0, channel: 0, key: 62, tick: 0 }]);
        let (notes, _) = extract_notes(&f).unwrap();
        assert_eq!((notes[0].pitch, notes[0].duration_ticks), (62, 480));
        let end: u32 = f.tracks[0].events.iter().map(|e| e.delta).sum();
        assert_eq!(end, 480);
    }

    #[test]
    fn unknown_meta_and_chunks_survive() {
        let track = [0x00, 0xFF, 0x03, 0x02, b'h', b'i', 0x00, 0x90, 60, 1, 0x10, 0x80, 60, 0, 0x00, 0xFF, 0x2F, 0x00];
        let mut bytes = smf(0, 96, &[&track]);
        bytes.extend(b"XFIH\x00\x00\x00\x01z");
        let f = parse_smf(&bytes).unwrap();
        assert_eq!(f.tracks[0].events[0].kind, EventKind::Meta { kind: 0x03, data: b"hi".to_vec() });
        assert_eq!(parse_smf(&write_smf(&f).unwrap()).unwrap(), f);
    }

    fn arb_event() -> impl Strategy<Value = TrackEvent> {
        let kind = prop_oneof![
            (0u8..16, 0u8..128, 1u8..128).prop_map(|(channel, key, velocity)| EventKind::NoteOn { channel, key, velocity }),
            (0u8..16, 0u8..128, 0u8..128).prop_map(|(channel, key, velocity)| EventKind::NoteOff { channel, key, velocity }),
            (1u32..0x0100_0000).prop_map(EventKind::Tempo),
            (1u8..13, 0u8..5).prop_map(|(numerator, denominator_pow)| EventKind::TimeSignature {
                numerator,
                denominator_pow,
                clocks_per_click: 24,
                thirty_seconds_per_quarter: 8
            }),
            (0u8..16, 0u8..128).prop_map(|(ch, v)| EventKind::Channel { status: 0xC0 | ch, data: vec![v] }),
            (0u8..16, 0u8..128, 0u8..128).prop_map(|(ch, a, b)| EventKind::Channel { status: 0xB0 | ch, data: vec![a, b] }),
            prop::collection::vec(any::<u8>(), 0..20).prop_map(|data| EventKind::Meta { kind: 0x01, data }),
        ];
        (prop_oneof![0u32..200, 0u32..=crate::midi_io::VLQ_MAX], kind).prop_map(|(delta, kind)| TrackEvent::new(delta, kind))
    }

    fn arb_file() -> impl Strategy<Value = MidiFile> {
        (prop::bool::ANY, 1u16..0x8000, prop::collection::vec(prop::collection::vec(arb_event(), 0..30), 1..4)).prop_map(
            |(single, ppq, mut tracks)| {
                if single {
                    tracks.truncate(1);
                }
                let tracks = tracks
                    .into_iter()
                    .map(|mut events| {
                        // Close every open note so the parser has nothing to repair.
                        let mut open = std::collections::BTreeMap::<(u8, u8), usize>::new();
                        for e in &events {
                            match e.kind {
                                EventKind::NoteOn { channel, key, .. } => *open.entry((channel, key)).or_default() += 1,
                                EventKind::NoteOff { channel, key, .. } => {
                                    open.entry((channel, key)).and_modify(|n| *n = n.saturating_sub(1));
                                }
                                _ => {}
                            }
                        }
                        for ((channel, key), n) in open {
                            for _ in 0..n {
                                events.push(TrackEvent::new(0, EventKind::NoteOff { channel, key, velocity: 0 }));
                            }
                        }
                        events.push(TrackEvent::new(0, EventKind::EndOfTrack));
                        Track { events }
                    })
                    .collect();
                MidiFile { format: u16::from(!single), ppq, tracks }
            },
        )
    }

    proptest! {
        #[test]
        fn write_then_parse_is_identity(f in arb_file()) {
            let bytes = write_smf(&f).unwrap();
            prop_assert_eq!(parse_smf(&bytes).unwrap(), f);
        }
    }
}
