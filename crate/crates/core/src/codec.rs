//! SM130 I²C command and response frames.
//!
//! Wire layout (both directions): `[length, command, data..., csum]` where
//! `length = 1 + data.len()` counts the command byte plus the data bytes and
//! `csum` is the byte sum of everything before it, modulo 256.
//!
//! Responses read back over I²C arrive front-padded with `0x00` up to the
//! requested read size; [`decode_response`] skips that padding.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Largest data section a frame may carry.
pub const MAX_DATA_LEN: usize = 16;
/// Largest legal value of the length byte (command + 16 data bytes).
pub const MAX_LENGTH_BYTE: u8 = MAX_DATA_LEN as u8 + 1;

/// Select-tag opcode.
pub const CMD_SELECT_TAG: u8 = 0x83;
/// Status byte carried by a length-2 "no tag" answer.
pub const DEFAULT_NO_TAG_STATUS: u8 = 0x4E;
/// Tag-type byte reported for simulated 4-byte-serial tags.
pub const DEFAULT_TAG_TYPE: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("frame data is {0} bytes, at most {MAX_DATA_LEN} allowed")]
    DataTooLong(usize),
    #[error("write address {0:#04x} is odd; I2C write addresses are even")]
    OddWriteAddress(u8),
    #[error("checksum mismatch: frame carries {actual:#04x}, computed {expected:#04x}")]
    BadChecksum { expected: u8, actual: u8 },
    #[error("frame truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("length byte {0:#04x} exceeds the {MAX_LENGTH_BYTE} byte frame limit")]
    FrameTooLong(u8),
    #[error("response contains only padding")]
    Empty,
    #[error("tag serial has {0} bytes, expected 4 or 7")]
    BadSerialLength(usize),
    #[error("invalid hex text: {0}")]
    InvalidHex(String),
    #[error("legacy scan reads a single decimal size digit, found {0:?}")]
    LegacySizeDigit(char),
}

/// Byte-sum checksum over `length`, `command` and `data`, modulo 256.
pub fn checksum(length: u8, command: u8, data: &[u8]) -> u8 {
    data.iter()
        .fold(length.wrapping_add(command), |acc, b| acc.wrapping_add(*b))
}

/// Uppercase hex, two characters per byte, no separators.
pub fn to_hex(bytes: &[u8]) -> String {
    hex::encode_upper(bytes)
}

/// Parses hex text in either case.
pub fn from_hex(text: &str) -> Result<Vec<u8>, CodecError> {
    hex::decode(text).map_err(|e| CodecError::InvalidHex(e.to_string()))
}

/// A command sent from the host to the reader.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandFrame {
    pub command: u8,
    pub data: Vec<u8>,
}

impl CommandFrame {
    pub fn new(command: u8, data: impl Into<Vec<u8>>) -> Self {
        CommandFrame {
            command,
            data: data.into(),
        }
    }

    pub fn select_tag() -> Self {
        CommandFrame::new(CMD_SELECT_TAG, Vec::new())
    }

    pub fn length_byte(&self) -> Result<u8, CodecError> {
        if self.data.len() > MAX_DATA_LEN {
            return Err(CodecError::DataTooLong(self.data.len()));
        }
        Ok(self.data.len() as u8 + 1)
    }

    /// `[length, command, data..., csum]`.
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let length = self.length_byte()?;
        let mut out = Vec::with_capacity(self.data.len() + 3);
        out.push(length);
        out.push(self.command);
        out.extend_from_slice(&self.data);
        out.push(checksum(length, self.command, &self.data));
        Ok(out)
    }
}

pub fn encode_command(frame: &CommandFrame) -> Result<Vec<u8>, CodecError> {
    frame.encode()
}

/// The I²C write payload: the device's (even) write address followed by the
/// encoded frame.
pub fn encode_write_payload(slave_addr: u8, frame: &CommandFrame) -> Result<Vec<u8>, CodecError> {
    if slave_addr & 1 == 1 {
        return Err(CodecError::OddWriteAddress(slave_addr));
    }
    let mut out = vec![slave_addr];
    out.extend(frame.encode()?);
    Ok(out)
}

/// A checksum-verified response frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseFrame {
    pub length: u8,
    pub command: u8,
    pub payload: Vec<u8>,
    pub csum: u8,
}

impl ResponseFrame {
    /// Builds a well-formed response with its length and checksum filled in.
    pub fn new(command: u8, payload: impl Into<Vec<u8>>) -> Result<Self, CodecError> {
        let payload = payload.into();
        if payload.len() > MAX_DATA_LEN {
            return Err(CodecError::DataTooLong(payload.len()));
        }
        let length = payload.len() as u8 + 1;
        Ok(ResponseFrame {
            length,
            command,
            csum: checksum(length, command, &payload),
            payload,
        })
    }

    pub fn no_tag(command: u8, status: u8) -> Self {
        ResponseFrame::new(command, vec![status]).expect("single status byte fits")
    }

    pub fn tag(command: u8, tag_type: u8, serial: &[u8]) -> Result<Self, CodecError> {
        let mut payload = Vec::with_capacity(serial.len() + 1);
        payload.push(tag_type);
        payload.extend_from_slice(serial);
        ResponseFrame::new(command, payload)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + 3);
        out.push(self.length);
        out.push(self.command);
        out.extend_from_slice(&self.payload);
        out.push(self.csum);
        out
    }
}

/// A select-tag answer carrying a tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagResponse {
    pub command: u8,
    pub tag_type: u8,
    pub serial: Vec<u8>,
}

/// Classified response: a bare frame (length 1), "no tag" (length 2), or a
/// tag answer (length > 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Frame(ResponseFrame),
    NoTag { command: u8, status: u8 },
    Tag(TagResponse),
}

impl Response {
    pub fn command(&self) -> u8 {
        match self {
            Response::Frame(f) => f.command,
            Response::NoTag { command, .. } => *command,
            Response::Tag(t) => t.command,
        }
    }

    /// The bytes between the command byte and the checksum.
    pub fn payload(&self) -> Vec<u8> {
        match self {
            Response::Frame(f) => f.payload.clone(),
            Response::NoTag { status, .. } => vec![*status],
            Response::Tag(t) => {
                let mut p = vec![t.tag_type];
                p.extend_from_slice(&t.serial);
                p
            }
        }
    }
}

/// Skips leading `0x00` padding, then parses and verifies one frame.
/// Bytes after the checksum are ignored.
pub fn decode_response(raw: &[u8]) -> Result<Response, CodecError> {
    let start = raw
        .iter()
        .position(|&b| b != 0)
        .ok_or(CodecError::Empty)?;
    let frame = &raw[start..];
    let length = frame[0];
    if length > MAX_LENGTH_BYTE {
        return Err(CodecError::FrameTooLong(length));
    }
    let needed = length as usize + 2;
    if frame.len() < needed {
        return Err(CodecError::Truncated {
            needed,
            available: frame.len(),
        });
    }
    let command = frame[1];
    let payload = &frame[2..needed - 1];
    let csum = frame[needed - 1];
    let expected = checksum(length, command, payload);
    if csum != expected {
        return Err(CodecError::BadChecksum {
            expected,
            actual: csum,
        });
    }
    Ok(match length {
        1 => Response::Frame(ResponseFrame {
            length,
            command,
            payload: Vec::new(),
            csum,
        }),
        2 => Response::NoTag {
            command,
            status: payload[0],
        },
        _ => Response::Tag(TagResponse {
            command,
            tag_type: payload[0],
            serial: payload[1..].to_vec(),
        }),
    })
}

/// Drops the length, command and tag-type bytes, leaving the serial.
pub fn extract_tag(resp: &TagResponse) -> Result<TagId, CodecError> {
    TagId::from_serial(resp.serial.clone())
}

/// Character-level scan over a hex transcription of a padded response, the
/// way the host-side portal script locates the frame: skip every leading
/// `'0'`, read the single size digit, then copy the frame region.
///
/// The size digit is read as one decimal character, so only frames whose
/// length byte is at most `0x09` can be located this way.
pub fn legacy_hex_scan(hex_text: &str) -> Result<Response, CodecError> {
    let chars = hex_text.as_bytes();
    if !chars.len().is_multiple_of(2) || !chars.iter().all(u8::is_ascii_hexdigit) {
        return Err(CodecError::InvalidHex(hex_text.to_string()));
    }
    let mut i = chars.iter().position(|&c| c != b'0').ok_or(CodecError::Empty)?;
    if i % 2 == 0 {
        // A nonzero high nibble: the length byte is 0x10 or more.
        return Err(CodecError::LegacySizeDigit(chars[i] as char));
    }
    let size = (chars[i] as char)
        .to_digit(10)
        .ok_or(CodecError::LegacySizeDigit(chars[i] as char))? as usize;
    // Length byte, `size` bytes of command and payload, then the checksum,
    // two characters each. The leading '0' of the length byte was consumed
    // by the skip, so it is restored up front.
    let frame_chars = (size + 2) * 2;
    let mut clean = String::with_capacity(frame_chars);
    clean.push('0');
    let mut copied = 1;
    while copied < frame_chars {
        let Some(&c) = chars.get(i) else {
            return Err(CodecError::Truncated {
                needed: frame_chars / 2,
                available: copied / 2,
            });
        };
        clean.push(c as char);
        i += 1;
        copied += 1;
    }
    decode_response(&from_hex(&clean)?)
}

/// A tag serial (4 or 7 bytes). Displays as uppercase hex.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TagId(Vec<u8>);

impl TagId {
    pub fn from_serial(serial: impl Into<Vec<u8>>) -> Result<Self, CodecError> {
        let serial = serial.into();
        match serial.len() {
            4 | 7 => Ok(TagId(serial)),
            n => Err(CodecError::BadSerialLength(n)),
        }
    }

    pub fn serial(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        to_hex(&self.0)
    }
}

impl fmt::Display for TagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for TagId {
    type Err = CodecError;

    /// Accepts upper or lower case; the canonical form is uppercase.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Err(CodecError::BadSerialLength(0));
        }
        TagId::from_serial(from_hex(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_examples() {
        assert_eq!(checksum(0x01, 0x83, &[]), 0x84);
        assert_eq!(checksum(0x00, 0x00, &[]), 0x00);
        assert_eq!(checksum(0x03, 0x85, &[0xFF, 0xFF]), 0x86);
    }

    #[test]
    fn encode_command_examples() {
        assert_eq!(
            CommandFrame::select_tag().encode().unwrap(),
            vec![0x01, 0x83, 0x84]
        );
        assert_eq!(
            CommandFrame::new(0x80, vec![]).encode().unwrap(),
            vec![0x01, 0x80, 0x81]
        );
        assert_eq!(
            CommandFrame::new(0x85, vec![0xAA]).encode().unwrap(),
            vec![0x02, 0x85, 0xAA, 0x31]
        );
        assert_eq!(
            CommandFrame::new(0x85, vec![0; 17]).encode(),
            Err(CodecError::DataTooLong(17))
        );
    }

    #[test]
    fn write_payload() {
        let f = CommandFrame::select_tag();
        assert_eq!(
            encode_write_payload(0x42, &f).unwrap(),
            vec![0x42, 0x01, 0x83, 0x84]
        );
        assert_eq!(
            encode_write_payload(0x00, &f).unwrap(),
            vec![0x00, 0x01, 0x83, 0x84]
        );
        assert_eq!(
            encode_write_payload(0x43, &f),
            Err(CodecError::OddWriteAddress(0x43))
        );
    }

    #[test]
    fn decode_no_tag() {
        assert_eq!(
            decode_response(&[0x02, 0x83, 0x4E, 0xD3]).unwrap(),
            Response::NoTag {
                command: 0x83,
                status: 0x4E
            }
        );
    }

    #[test]
    fn decode_padded_tag() {
        let raw = [0x00, 0x00, 0x06, 0x83, 0x02, 0xAA, 0xBB, 0xCC, 0xDD, 0x99];
        match decode_response(&raw).unwrap() {
            Response::Tag(t) => {
                assert_eq!(t.tag_type, 0x02);
                assert_eq!(t.serial, vec![0xAA, 0xBB, 0xCC, 0xDD]);
                assert_eq!(extract_tag(&t).unwrap().to_hex(), "AABBCCDD");
            }
            other => panic!("expected tag, got {other:?}"),
        }
    }

    #[test]
    fn decode_errors() {
        assert_eq!(
            decode_response(&[0x06, 0x83, 0x02, 0xAA, 0xBB, 0xCC, 0xDD, 0x00]),
            Err(CodecError::BadChecksum {
                expected: 0x99,
                actual: 0x00
            })
        );
        assert_eq!(decode_response(&[0, 0, 0]), Err(CodecError::Empty));
        assert_eq!(decode_response(&[]), Err(CodecError::Empty));
        assert_eq!(
            decode_response(&[0x06, 0x83, 0x02]),
            Err(CodecError::Truncated {
                needed: 8,
                available: 3
            })
        );
        assert_eq!(
            decode_response(&[0x01, 0x83]),
            Err(CodecError::Truncated {
                needed: 3,
                available: 2
            })
        );
        assert_eq!(
            decode_response(&[0x12, 0x83, 0x00]),
            Err(CodecError::FrameTooLong(0x12))
        );
    }

    #[test]
    fn seven_byte_serial() {
        let serial = [0x04, 0x11, 0x22, 0x33, 0x44, 0x55, 0x66];
        let frame = ResponseFrame::tag(0x83, 0x02, &serial).unwrap();
        assert_eq!(frame.length, 0x09);
        let Response::Tag(t) = decode_response(&frame.encode()).unwrap() else {
            panic!("expected tag");
        };
        let id = extract_tag(&t).unwrap();
        assert_eq!(id.to_hex(), "04112233445566");
        assert_eq!(id.to_hex().len(), 14);
    }

    #[test]
    fn short_serial_rejected() {
        let t = TagResponse {
            command: 0x83,
            tag_type: 0x02,
            serial: vec![1, 2, 3],
        };
        assert_eq!(extract_tag(&t), Err(CodecError::BadSerialLength(3)));
    }

    #[test]
    fn legacy_scan_examples() {
        match legacy_hex_scan("0000068302AABBCCDD99").unwrap() {
            Response::Tag(t) => assert_eq!(t.serial, vec![0xAA, 0xBB, 0xCC, 0xDD]),
            other => panic!("expected tag, got {other:?}"),
        }
        assert_eq!(
            legacy_hex_scan("0002834ED3").unwrap(),
            Response::NoTag {
                command: 0x83,
                status: 0x4E
            }
        );
        assert_eq!(legacy_hex_scan("0000"), Err(CodecError::Empty));
        assert_eq!(legacy_hex_scan(""), Err(CodecError::Empty));
    }

    #[test]
    fn legacy_scan_limits() {
        assert!(matches!(
            legacy_hex_scan("0A83"),
            Err(CodecError::LegacySizeDigit('A'))
        ));
        assert!(matches!(
            legacy_hex_scan("00108300"),
            Err(CodecError::LegacySizeDigit('1'))
        ));
        assert!(matches!(
            legacy_hex_scan("068302AA"),
            Err(CodecError::Truncated { .. })
        ));
        assert!(matches!(legacy_hex_scan("0G"), Err(CodecError::InvalidHex(_))));
        assert!(matches!(legacy_hex_scan("000"), Err(CodecError::InvalidHex(_))));
    }

    #[test]
    fn tag_id_parsing_normalizes_case() {
        let id: TagId = "aabbccdd".parse().unwrap();
        assert_eq!(id.to_string(), "AABBCCDD");
        assert!("".parse::<TagId>().is_err());
        assert!("AABBCC".parse::<TagId>().is_err());
        assert!("XYZ0".parse::<TagId>().is_err());
    }
}
