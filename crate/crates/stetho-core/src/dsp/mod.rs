//! Transmitter front-end emulation: preamplifier, selectable low-pass
//! filter, variable-gain power amplifier with rail clipping, and 12-bit
//! conversion. The receive side reuses [`dequantize_dac`] for its DAC.

mod adc;
mod biquad;

pub use adc::{
    dequantize_codes, dequantize_dac, dequantize_sample, quantize_adc, quantize_sample,
    SampleBlock, MAX_CODE, MIDPOINT_CODE,
};
pub use biquad::{
    cascade_apply, design_bandpass, design_dc_blocker, design_lowpass, filter_apply,
    BiquadSection,
};

use crate::audio::{AudioBuffer, AudioError};
use thiserror::Error;

/// Corner frequency of the DC-blocking high-pass at the chain entry.
pub const DC_BLOCK_CUTOFF_HZ: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("gain must be positive and finite, got {0}")]
    InvalidGain(f64),
    #[error("volume must lie in [0, 1], got {0}")]
    InvalidVolume(f64),
    #[error("full scale must be positive and finite, got {0}")]
    InvalidFullScale(f64),
    #[error("cutoff {cutoff} Hz is outside (0, {sample_rate}/2) Hz")]
    CutoffOutOfRange { cutoff: f64, sample_rate: f64 },
    #[error("band [{lo}, {hi}] Hz is not ordered")]
    InvalidBand { lo: f64, hi: f64 },
    #[error("filter section is unstable (a1={a1}, a2={a2})")]
    UnstableFilter { a1: f64, a2: f64 },
    #[error("sample rate {actual} Hz does not match configured {expected} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },
    #[error("sample rate {sample_rate} Hz leaves no Nyquist margin over the {cutoff} Hz cutoff")]
    InsufficientSampleRate { sample_rate: u32, cutoff: u32 },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("12-bit code out of range: {0}")]
    CodeOutOfRange(u16),
}

/// The two selectable low-pass corner frequencies: 100 Hz favors heart
/// sounds, 1000 Hz passes respiration sounds as well.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cutoff {
    Hz100,
    Hz1000,
}

impl Cutoff {
    pub fn hz(self) -> f64 {
        match self {
            Cutoff::Hz100 => 100.0,
            Cutoff::Hz1000 => 1000.0,
        }
    }

    pub fn hz_u32(self) -> u32 {
        self.hz() as u32
    }

    /// Accepts exactly 100 or 1000.
    pub fn from_hz(hz: u32) -> Option<Self> {
        match hz {
            100 => Some(Cutoff::Hz100),
            1000 => Some(Cutoff::Hz1000),
            _ => None,
        }
    }
}

impl std::fmt::Display for Cutoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.hz_u32())
    }
}

/// Every front-end parameter in one value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    /// Preamplifier gain (fixed by its feedback network).
    pub preamp_gain: f64,
    /// Selected low-pass corner.
    pub cutoff: Cutoff,
    /// Low-pass passband gain.
    pub filter_gain: f64,
    /// Power-amplifier input pot position, 0 (grounded) to 1 (full).
    pub volume: f64,
    /// Power-amplifier gain at full pot.
    pub power_gain: f64,
    /// Converter and clipping rail voltage.
    pub full_scale: f64,
    /// Capture rate in Hz.
    pub sample_rate: u32,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            preamp_gain: 20.0,
            cutoff: Cutoff::Hz100,
            filter_gain: 1.6,
            volume: 0.5,
            power_gain: 20.0,
            full_scale: 2.5,
            sample_rate: 4000,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        for gain in [self.preamp_gain, self.filter_gain, self.power_gain] {
            if !(gain.is_finite() && gain > 0.0) {
                return Err(DspError::InvalidGain(gain));
            }
        }
        if !(self.volume.is_finite() && (0.0..=1.0).contains(&self.volume)) {
            return Err(DspError::InvalidVolume(self.volume));
        }
        if !(self.full_scale.is_finite() && self.full_scale > 0.0) {
            return Err(DspError::InvalidFullScale(self.full_scale));
        }
        if self.sample_rate as f64 <= 2.0 * self.cutoff.hz() {
            return Err(DspError::InsufficientSampleRate {
                sample_rate: self.sample_rate,
                cutoff: self.cutoff.hz_u32(),
            });
        }
        Ok(())
    }

    /// Nominal passband gain product of the analog stages.
    pub fn nominal_gain(&self) -> f64 {
        self.preamp_gain * self.filter_gain * self.volume * self.power_gain
    }
}

/// Fixed-gain preamplifier: lifts the microphone signal to line level.
/// No clipping at this stage.
pub fn preamplify(buf: &AudioBuffer, gain: f64) -> Result<AudioBuffer, DspError> {
    if !(gain.is_finite() && gain > 0.0) {
        return Err(DspError::InvalidGain(gain));
    }
    let out = buf.samples().iter().map(|&s| gain * s).collect();
    Ok(AudioBuffer::new(buf.sample_rate(), out)?)
}

/// Power amplifier with pot-controlled gain and symmetric rail clipping.
pub fn power_amplify(
    buf: &AudioBuffer,
    volume: f64,
    power_gain: f64,
    full_scale: f64,
) -> Result<AudioBuffer, DspError> {
    if !(volume.is_finite() && (0.0..=1.0).contains(&volume)) {
        return Err(DspError::InvalidVolume(volume));
    }
    if !(power_gain.is_finite() && power_gain > 0.0) {
        return Err(DspError::InvalidGain(power_gain));
    }
    if !(full_scale.is_finite() && full_scale > 0.0) {
        return Err(DspError::InvalidFullScale(full_scale));
    }
    let g = volume * power_gain;
    let out = buf
        .samples()
        .iter()
        .map(|&s| (g * s).clamp(-full_scale, full_scale))
        .collect();
    Ok(AudioBuffer::new(buf.sample_rate(), out)?)
}

/// Streaming transmitter chain.
///
/// Filter state persists across [`process`](Self::process) calls, so a live
/// stream may be fed block by block. One chain serves one stream; it is not
/// meant to be shared across concurrent producers.
#[derive(Debug, Clone)]
pub struct TransmitChain {
    cfg: ChainConfig,
    dc_blocker: BiquadSection,
    lowpass: BiquadSection,
    next_timestamp: u64,
}

impl TransmitChain {
    pub fn new(cfg: ChainConfig) -> Result<Self, DspError> {
        cfg.validate()?;
        Ok(Self {
            dc_blocker: design_dc_blocker(DC_BLOCK_CUTOFF_HZ, cfg.sample_rate as f64)?,
            lowpass: design_lowpass(cfg.cutoff.hz(), cfg.filter_gain, cfg.sample_rate as f64)?,
            cfg,
            next_timestamp: 0,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    /// Sample index the next processed block will start at.
    pub fn next_timestamp(&self) -> u64 {
        self.next_timestamp
    }

    /// Swaps in a new configuration at a block boundary.
    ///
    /// A cutoff or sample-rate change redesigns the filters and resets their
    /// state; volume and gain changes keep the stream seamless.
    pub fn set_config(&mut self, cfg: ChainConfig) -> Result<(), DspError> {
        cfg.validate()?;
        if cfg.cutoff != self.cfg.cutoff
            || cfg.sample_rate != self.cfg.sample_rate
            || cfg.filter_gain != self.cfg.filter_gain
        {
            self.lowpass = design_lowpass(cfg.cutoff.hz(), cfg.filter_gain, cfg.sample_rate as f64)?;
        }
        if cfg.sample_rate != self.cfg.sample_rate {
            self.dc_blocker = design_dc_blocker(DC_BLOCK_CUTOFF_HZ, cfg.sample_rate as f64)?;
        }
        self.cfg = cfg;
        Ok(())
    }

    /// Runs one block through DC block, preamp, low-pass, power amp and ADC.
    pub fn process(&mut self, block: &AudioBuffer) -> Result<SampleBlock, DspError> {
        if block.sample_rate() != self.cfg.sample_rate {
            return Err(DspError::SampleRateMismatch {
                expected: self.cfg.sample_rate,
                actual: block.sample_rate(),
            });
        }
        let blocked = filter_apply(block, &mut self.dc_blocker)?;
        let pre = preamplify(&blocked, self.cfg.preamp_gain)?;
        let filtered = filter_apply(&pre, &mut self.lowpass)?;
        let amped = power_amplify(
            &filtered,
            self.cfg.volume,
            self.cfg.power_gain,
            self.cfg.full_scale,
        )?;
        let ts = self.next_timestamp;
        self.next_timestamp += block.len() as u64;
        Ok(quantize_adc(&amped, self.cfg.full_scale)?.at_timestamp(ts))
    }
}

/// One-shot run of the whole transmit chain over a buffer.
pub fn run_transmit_chain(buf: &AudioBuffer, cfg: &ChainConfig) -> Result<SampleBlock, DspError> {
    TransmitChain::new(*cfg)?.process(buf)
}
