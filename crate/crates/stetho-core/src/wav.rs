//! Canonical mono 16-bit PCM WAV storage.
//!
//! The writer emits the classic 44-byte header followed by little-endian
//! samples; output bytes depend only on the input, so identical signals
//! produce identical files. The reader accepts canonical PCM (format tag 1,
//! one channel, 16 bits), skips unrelated chunks, and rejects everything
//! else with a specific error. Voltages map linearly onto the sample range:
//! `+full_scale -> +32767`, `-full_scale -> -32768`, clamped.

use crate::audio::{AudioBuffer, AudioError};
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("full scale must be positive and finite, got {0}")]
    InvalidFullScale(f64),
    #[error("not a RIFF file")]
    NotRiff,
    #[error("RIFF form is not WAVE")]
    NotWave,
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("chunk size inconsistent with file length in {0}")]
    MalformedChunk(&'static str),
    #[error("missing fmt chunk")]
    MissingFmt,
    #[error("missing data chunk")]
    MissingData,
    #[error("unsupported format tag {0:#06x}, only PCM (1) is accepted")]
    UnsupportedFormatTag(u16),
    #[error("unsupported channel count {0}, only mono is accepted")]
    UnsupportedChannels(u16),
    #[error("unsupported bit depth {0}, only 16-bit is accepted")]
    UnsupportedBitDepth(u16),
    #[error("sample rate in header is zero")]
    ZeroSampleRate,
}

const HEADER_LEN: usize = 44;
const FMT_CHUNK_LEN: u32 = 16;
const PCM_TAG: u16 = 1;

fn check_full_scale(full_scale: f64) -> Result<(), WavError> {
    if !(full_scale.is_finite() && full_scale > 0.0) {
        return Err(WavError::InvalidFullScale(full_scale));
    }
    Ok(())
}

/// Volts to 16-bit PCM: `round(v / full_scale * 32768)`, clamped. Zero
/// volts is exactly PCM 0, so silence survives a round trip; `+full_scale`
/// clamps onto 32767, `-full_scale` lands exactly on -32768.
#[inline]
fn volts_to_pcm(v: f64, full_scale: f64) -> i16 {
    let x = v / full_scale * 32768.0;
    (x + 0.5).floor().clamp(-32768.0, 32767.0) as i16
}

/// Inverse of the linear map in [`volts_to_pcm`].
#[inline]
fn pcm_to_volts(pcm: i16, full_scale: f64) -> f64 {
    pcm as f64 / 32768.0 * full_scale
}

/// Serializes a buffer to canonical WAV bytes.
pub fn encode_wav(buf: &AudioBuffer, full_scale: f64) -> Result<Vec<u8>, WavError> {
    check_full_scale(full_scale)?;
    let data_len = buf.len() as u32 * 2;
    let sample_rate = buf.sample_rate();
    let mut out = Vec::with_capacity(HEADER_LEN + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&FMT_CHUNK_LEN.to_le_bytes());
    out.extend_from_slice(&PCM_TAG.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // channels
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &v in buf.samples() {
        out.extend_from_slice(&volts_to_pcm(v, full_scale).to_le_bytes());
    }
    Ok(out)
}

/// Parses canonical WAV bytes back into volts.
pub fn decode_wav(bytes: &[u8], full_scale: f64) -> Result<AudioBuffer, WavError> {
    check_full_scale(full_scale)?;
    if bytes.len() < 12 {
        return Err(WavError::Truncated("RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(WavError::NotRiff);
    }
    let riff_size = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if riff_size + 8 > bytes.len() {
        return Err(WavError::MalformedChunk("RIFF size"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }

    let mut fmt: Option<(u32, u16, u16, u16)> = None; // rate, channels, bits, tag
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .ok_or(WavError::MalformedChunk("chunk size"))?;
        if body_end > bytes.len() {
            return Err(WavError::MalformedChunk(match &id {
                b"fmt " => "fmt ",
                b"data" => "data",
                _ => "chunk",
            }));
        }
        let body = &bytes[body_start..body_end];
        match &id {
            b"fmt " => {
                if size < FMT_CHUNK_LEN as usize {
                    return Err(WavError::MalformedChunk("fmt "));
                }
                let tag = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((rate, channels, bits, tag));
            }
            b"data" => {
                data = Some(body);
            }
            _ => {} // unrelated chunk, skip
        }
        // Chunks are word-aligned; odd sizes carry one pad byte.
        pos = body_end + size % 2;
    }

    let (rate, channels, bits, tag) = fmt.ok_or(WavError::MissingFmt)?;
    if tag != PCM_TAG {
        return Err(WavError::UnsupportedFormatTag(tag));
    }
    if channels != 1 {
        return Err(WavError::UnsupportedChannels(channels));
    }
    if bits != 16 {
        return Err(WavError::UnsupportedBitDepth(bits));
    }
    if rate == 0 {
        return Err(WavError::ZeroSampleRate);
    }
    let data = data.ok_or(WavError::MissingData)?;
    if data.len() % 2 != 0 {
        return Err(WavError::MalformedChunk("data"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|b| pcm_to_volts(i16::from_le_bytes([b[0], b[1]]), full_scale))
        .collect();
    Ok(AudioBuffer::new(rate, samples)?)
}

/// Writes `buf` to `path` as canonical mono 16-bit PCM.
pub fn write_wav<P: AsRef<Path>>(
    path: P,
    buf: &AudioBuffer,
    full_scale: f64,
) -> Result<(), WavError> {
    let bytes = encode_wav(buf, full_scale)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a canonical mono 16-bit PCM file written by [`write_wav`] or any
/// compatible tool.
pub fn read_wav<P: AsRef<Path>>(path: P, full_scale: f64) -> Result<AudioBuffer, WavError> {
    let bytes = fs::read(path)?;
    decode_wav(&bytes, full_scale)
}
