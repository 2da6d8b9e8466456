use super::vlq::write_vlq;
use super::{EventKind, MidiError, MidiFile};

/// Serializes `file` canonically.
pub fn write_smf(file: &MidiFile) -> Result<Vec<u8>, MidiError> {
    file.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&file.format.to_be_bytes());
    out.extend_from_slice(&(file.tracks.len() as u16).to_be_bytes());
    out.extend_from_slice(&file.ppq.to_be_bytes());

    let mut body = Vec::new();
    for track in &file.tracks {
        body.clear();
        for ev in &track.events {
            write_vlq(ev.delta, &mut body)?;
            write_event(&ev.kind, &mut body)?;
        }
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    Ok(out)
}

fn write_meta(kind: u8, data: &[u8], out: &mut Vec<u8>) -> Result<(), MidiError> {
    out.push(0xFF);
    out.push(kind);
    write_vlq(data.len() as u32, out)?;
    out.extend_from_slice(data);
    Ok(())
}

fn write_event(kind: &EventKind, out: &mut Vec<u8>) -> Result<(), MidiError> {
    match kind {
        EventKind::NoteOff { channel, key, velocity } => out.extend_from_slice(&[0x80 | channel, *key, *velocity]),
        EventKind::NoteOn { channel, key, velocity } => out.extend_from_slice(&[0x90 | channel, *key, *velocity]),
        EventKind::Channel { status, data } => {
            out.push(*status);
            out.extend_from_slice(data);
        }
        EventKind::Tempo(us) => write_meta(0x51, &us.to_be_bytes()[1..], out)?,
        EventKind::TimeSignature {
            numerator,
            denominator_pow,
            clocks_per_click,
            thirty_seconds_per_quarter,
        } => write_meta(
            0x58,
            &[*numerator, *denominator_pow, *clocks_per_click, *thirty_seconds_per_quarter],
            out,
        )?,
        EventKind::EndOfTrack => write_meta(0x2F, &[], out)?,
        EventKind::Meta { kind, data } => write_meta(*kind, data, out)?,
        EventKind::SysEx { status, data } => {
            out.push(*status);
            write_vlq(data.len() as u32, out)?;
            out.extend_from_slice(data);
        }
    }
    Ok(())
}
