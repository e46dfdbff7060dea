//! Wireless frame layout and the 12-bit code packing codec.
//!
//! Wire format, big-endian:
//!
//! ```text
//! byte 0      version, always 0x01
//! byte 1      flags (bit 0: cutoff, 0 = 100 Hz / 1 = 1000 Hz;
//!                    bit 1: odd-sample padding present)
//! bytes 2-3   sequence number (wrapping u16)
//! bytes 4-7   timestamp, sample index of the first code (wrapping u32)
//! byte 8      code count N, 1..=48
//! then        ceil(N * 12 / 8) bytes of packed codes
//! ```
//!
//! Codes pack two per three bytes: for the pair `(s0, s1)`,
//! `byte0 = s0[11:4]`, `byte1 = (s0[3:0] << 4) | s1[11:8]`, `byte2 = s1[7:0]`.
//! An odd count pads the final low nibble with zero and sets flags bit 1.

use crate::dsp::{SampleBlock, MAX_CODE};
use thiserror::Error;

/// Protocol version emitted and accepted.
pub const WIRE_VERSION: u8 = 0x01;
/// Fixed header length in bytes.
pub const HEADER_LEN: usize = 9;
/// Codes carried by a full packet. 48 codes pack into 72 bytes, which with
/// the header stays inside a 102-byte application payload budget.
pub const MAX_CODES_PER_PACKET: usize = 48;
/// Longest possible encoding: header plus 48 packed codes.
pub const MAX_ENCODED_LEN: usize = HEADER_LEN + (MAX_CODES_PER_PACKET * 12).div_ceil(8);

/// Flag bits carried in byte 1.
pub mod flags {
    /// Set when the 1000 Hz cutoff produced this packet's samples.
    pub const CUTOFF_1000: u8 = 0b0000_0001;
    /// Set when the packed payload ends in a zero pad nibble (odd count).
    pub const ODD_PADDING: u8 = 0b0000_0010;
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("packet carries no codes")]
    Empty,
    #[error("packet carries {0} codes, limit is {MAX_CODES_PER_PACKET}")]
    Oversize(usize),
    #[error("12-bit code out of range: {0}")]
    CodeOutOfRange(u16),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("buffer holds {actual} bytes, header needs {HEADER_LEN}")]
    TruncatedHeader { actual: usize },
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("invalid code count {0}")]
    InvalidCodeCount(u8),
    #[error("payload truncated: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("length mismatch: expected {expected} bytes, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("padding flag inconsistent with code count {count}")]
    PaddingFlagMismatch { count: u8 },
    #[error("final pad nibble is not zero")]
    NonzeroPadding,
}

/// One wireless frame of 12-bit sample codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub version: u8,
    pub flags: u8,
    pub seq: u16,
    pub timestamp: u32,
    pub codes: Vec<u16>,
}

impl Packet {
    /// Builds a validated packet. The odd-padding flag bit is derived from
    /// the code count, so callers only control the cutoff bit.
    pub fn new(seq: u16, timestamp: u32, flags: u8, codes: Vec<u16>) -> Result<Self, EncodeError> {
        validate_codes(&codes)?;
        Ok(Self {
            version: WIRE_VERSION,
            flags: normalize_flags(flags, codes.len()),
            seq,
            timestamp,
            codes,
        })
    }
}

fn validate_codes(codes: &[u16]) -> Result<(), EncodeError> {
    if codes.is_empty() {
        return Err(EncodeError::Empty);
    }
    if codes.len() > MAX_CODES_PER_PACKET {
        return Err(EncodeError::Oversize(codes.len()));
    }
    if let Some(&c) = codes.iter().find(|&&c| c > MAX_CODE) {
        return Err(EncodeError::CodeOutOfRange(c));
    }
    Ok(())
}

fn normalize_flags(flags: u8, count: usize) -> u8 {
    if count % 2 == 1 {
        flags | flags::ODD_PADDING
    } else {
        flags & !flags::ODD_PADDING
    }
}

/// Splits a sample block into consecutive packets of up to 48 codes.
///
/// Sequence numbers wrap; timestamps carry the sample index of each packet's
/// first code. An empty block yields no packets.
pub fn packetize(block: &SampleBlock, seq_start: u16, flags: u8) -> Vec<Packet> {
    block
        .codes()
        .chunks(MAX_CODES_PER_PACKET)
        .enumerate()
        .map(|(i, chunk)| {
            let offset = (i * MAX_CODES_PER_PACKET) as u64;
            Packet {
                version: WIRE_VERSION,
                flags: normalize_flags(flags, chunk.len()),
                seq: seq_start.wrapping_add(i as u16),
                timestamp: (block.start_timestamp().wrapping_add(offset)) as u32,
                codes: chunk.to_vec(),
            }
        })
        .collect()
}

fn packed_len(count: usize) -> usize {
    (count * 12).div_ceil(8)
}

/// Serializes a packet to its wire bytes. Deterministic and bit-exact.
pub fn encode_packet(p: &Packet) -> Result<Vec<u8>, EncodeError> {
    validate_codes(&p.codes)?;
    let mut out = Vec::with_capacity(HEADER_LEN + packed_len(p.codes.len()));
    out.push(WIRE_VERSION);
    out.push(normalize_flags(p.flags, p.codes.len()));
    out.extend_from_slice(&p.seq.to_be_bytes());
    out.extend_from_slice(&p.timestamp.to_be_bytes());
    out.push(p.codes.len() as u8);
    for pair in p.codes.chunks(2) {
        let s0 = pair[0];
        out.push((s0 >> 4) as u8);
        if pair.len() == 2 {
            let s1 = pair[1];
            out.push((((s0 & 0x0f) << 4) | (s1 >> 8)) as u8);
            out.push((s1 & 0xff) as u8);
        } else {
            out.push(((s0 & 0x0f) << 4) as u8);
        }
    }
    Ok(out)
}

/// Exact inverse of [`encode_packet`] with full validation.
pub fn decode_packet(bytes: &[u8]) -> Result<Packet, DecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::TruncatedHeader {
            actual: bytes.len(),
        });
    }
    let version = bytes[0];
    if version != WIRE_VERSION {
        return Err(DecodeError::BadVersion(version));
    }
    let flags = bytes[1];
    let seq = u16::from_be_bytes([bytes[2], bytes[3]]);
    let timestamp = u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    let count = bytes[8];
    if count == 0 || count as usize > MAX_CODES_PER_PACKET {
        return Err(DecodeError::InvalidCodeCount(count));
    }
    let expected = HEADER_LEN + packed_len(count as usize);
    if bytes.len() < expected {
        return Err(DecodeError::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DecodeError::LengthMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let odd = count % 2 == 1;
    if (flags & flags::ODD_PADDING != 0) != odd {
        return Err(DecodeError::PaddingFlagMismatch { count });
    }

    let payload = &bytes[HEADER_LEN..];
    let mut codes = Vec::with_capacity(count as usize);
    let mut i = 0;
    while codes.len() < count as usize {
        let remaining = count as usize - codes.len();
        if remaining >= 2 {
            let b0 = payload[i] as u16;
            let b1 = payload[i + 1] as u16;
            let b2 = payload[i + 2] as u16;
            codes.push((b0 << 4) | (b1 >> 4));
            codes.push(((b1 & 0x0f) << 8) | b2);
            i += 3;
        } else {
            let b0 = payload[i] as u16;
            let b1 = payload[i + 1] as u16;
            if b1 & 0x0f != 0 {
                return Err(DecodeError::NonzeroPadding);
            }
            codes.push((b0 << 4) | (b1 >> 4));
            i += 2;
        }
    }
    Ok(Packet {
        version,
        flags,
        seq,
        timestamp,
        codes,
    })
}
