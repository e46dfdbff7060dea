//! 12-bit successive-approximation converter model.
//!
//! Codes span `0..=4095`; 0 V sits at code 2048 (round-half-up). Voltages
//! outside `±full_scale` clamp to the rails, matching converter behavior.

use crate::audio::AudioBuffer;
use crate::dsp::DspError;

/// Highest representable 12-bit code.
pub const MAX_CODE: u16 = 4095;
/// Code for 0 V.
pub const MIDPOINT_CODE: u16 = 2048;

/// A run of 12-bit sample codes tagged with its position in the stream.
///
/// `start_timestamp` is the sample index of the first code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBlock {
    codes: Vec<u16>,
    start_timestamp: u64,
    sample_rate: u32,
}

impl SampleBlock {
    pub fn new(codes: Vec<u16>, start_timestamp: u64, sample_rate: u32) -> Result<Self, DspError> {
        if let Some(&code) = codes.iter().find(|&&c| c > MAX_CODE) {
            return Err(DspError::CodeOutOfRange(code));
        }
        if sample_rate == 0 {
            return Err(DspError::ZeroSampleRate);
        }
        Ok(Self {
            codes,
            start_timestamp,
            sample_rate,
        })
    }

    pub fn codes(&self) -> &[u16] {
        &self.codes
    }

    pub fn into_codes(self) -> Vec<u16> {
        self.codes
    }

    pub fn start_timestamp(&self) -> u64 {
        self.start_timestamp
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Same codes re-anchored at a different stream position.
    pub fn at_timestamp(mut self, start_timestamp: u64) -> Self {
        self.start_timestamp = start_timestamp;
        self
    }
}

fn check_full_scale(full_scale: f64) -> Result<(), DspError> {
    if !(full_scale.is_finite() && full_scale > 0.0) {
        return Err(DspError::InvalidFullScale(full_scale));
    }
    Ok(())
}

/// Quantizes one voltage: `round((v + fs) / (2 fs) * 4095)`, half up, clamped.
#[inline]
pub fn quantize_sample(v: f64, full_scale: f64) -> u16 {
    let x = (v + full_scale) / (2.0 * full_scale) * MAX_CODE as f64;
    let rounded = (x + 0.5).floor();
    rounded.clamp(0.0, MAX_CODE as f64) as u16
}

/// Reconstructs the voltage for one code: `c / 4095 * 2 fs - fs`.
#[inline]
pub fn dequantize_sample(code: u16, full_scale: f64) -> f64 {
    code as f64 / MAX_CODE as f64 * 2.0 * full_scale - full_scale
}

/// 12-bit conversion of a whole buffer. The block starts at timestamp 0;
/// use [`SampleBlock::at_timestamp`] to place it in a longer stream.
pub fn quantize_adc(buf: &AudioBuffer, full_scale: f64) -> Result<SampleBlock, DspError> {
    check_full_scale(full_scale)?;
    let codes = buf
        .samples()
        .iter()
        .map(|&v| quantize_sample(v, full_scale))
        .collect();
    SampleBlock::new(codes, 0, buf.sample_rate())
}

/// Validates and converts a raw code slice back to volts.
pub fn dequantize_codes(codes: &[u16], full_scale: f64) -> Result<Vec<f64>, DspError> {
    check_full_scale(full_scale)?;
    codes
        .iter()
        .map(|&c| {
            if c > MAX_CODE {
                Err(DspError::CodeOutOfRange(c))
            } else {
                Ok(dequantize_sample(c, full_scale))
            }
        })
        .collect()
}

/// Inverse of [`quantize_adc`].
pub fn dequantize_dac(block: &SampleBlock, full_scale: f64) -> Result<AudioBuffer, DspError> {
    let samples = dequantize_codes(block.codes(), full_scale)?;
    Ok(AudioBuffer::new(block.sample_rate(), samples)?)
}
