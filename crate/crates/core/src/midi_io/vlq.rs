use super::MidiError;

/// Largest value a 4-byte variable-length quantity can carry.
pub const VLQ_MAX: u32 = 0x0FFF_FFFF;

/// Reads a variable-length quantity starting at `offset`.
///
/// Returns the value and the offset just past its final byte.
pub fn read_vlq(bytes: &[u8], offset: usize) -> Result<(u32, usize), MidiError> {
    let mut value: u32 = 0;
    for i in 0..4 {
        let b = *bytes.get(offset + i).ok_or(MidiError::TruncatedInput)?;
        value = (value << 7) | u32::from(b & 0x7F);
        if b & 0x80 == 0 {
            return Ok((value, offset + i + 1));
        }
    }
    Err(MidiError::UnterminatedVlq(offset))
}

/// Appends the minimal-length encoding of `value`.
pub fn write_vlq(value: u32, out: &mut Vec<u8>) -> Result<(), MidiError> {
    if value > VLQ_MAX {
        return Err(MidiError::InvariantViolation(format!(
            "{value} does not fit in a variable-length quantity"
        )));
    }
    let mut shift = 21;
    while shift > 0 && value >> shift == 0 {
        shift -= 7;
    }
    while shift > 0 {
        out.push(0x80 | ((value >> shift) & 0x7F) as u8);
        shift -= 7;
    }
    out.push((value & 0x7F) as u8);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decode_examples() {
        assert_eq!(read_vlq(&[0x00], 0), Ok((0, 1)));
        assert_eq!(read_vlq(&[0x81, 0x00], 0), Ok((128, 2)));
        assert_eq!(read_vlq(&[0xFF, 0xFF, 0xFF, 0x7F], 0), Ok((268_435_455, 4)));
        assert_eq!(read_vlq(&[0x12, 0x81, 0x00], 1), Ok((128, 3)));
    }

    #[test]
    fn decode_errors() {
        assert_eq!(read_vlq(&[0xFF, 0xFF, 0xFF, 0xFF, 0x7F], 0), Err(MidiError::UnterminatedVlq(0)));
        assert_eq!(read_vlq(&[0x81], 0), Err(MidiError::TruncatedInput));
        assert_eq!(read_vlq(&[], 0), Err(MidiError::TruncatedInput));
    }

    #[test]
    fn encodings_are_minimal() {
        let enc = |v| {
            let mut out = Vec::new();
            write_vlq(v, &mut out).unwrap();
            out
        };
        assert_eq!(enc(0), vec![0x00]);
        assert_eq!(enc(127), vec![0x7F]);
        assert_eq!(enc(128), vec![0x81, 0x00]);
        assert_eq!(enc(16383), vec![0xFF, 0x7F]);
        assert_eq!(enc(16384), vec![0x81, 0x80, 0x00]);
        assert_eq!(enc(VLQ_MAX), vec![0xFF, 0xFF, 0xFF, 0x7F]);
        assert!(write_vlq(VLQ_MAX + 1, &mut Vec::new()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(v in 0u32..=VLQ_MAX) {
            let mut out = Vec::new();
            write_vlq(v, &mut out).unwrap();
            prop_assert_eq!(read_vlq(&out, 0), Ok((v, out.len())));
        }
    }
}
