//! Deterministic test-signal generators at microphone level.
//!
//! Heart beats are modeled as Gaussian-windowed tone bursts: a 37 Hz S1 at
//! each beat onset and a weaker 60 Hz S2 0.3 s later. The murmur variant
//! adds 150-400 Hz band noise in late systole; the lung surrogate is band
//! noise with components up to 900 Hz. All outputs are reproducible from
//! the seed.

use crate::audio::AudioBuffer;
use crate::dsp::{cascade_apply, design_bandpass, DspError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use thiserror::Error;

/// First beat onset, leaving room for analysis windows.
pub const FIRST_BEAT_SECS: f64 = 0.5;
/// S2 follows S1 by this much within each beat.
pub const S2_DELAY_SECS: f64 = 0.3;
/// S1 burst: carrier, peak amplitude (volts), Gaussian sigma (seconds).
pub const S1_FREQ_HZ: f64 = 37.0;
pub const S1_AMPLITUDE: f64 = 0.006;
pub const S1_SIGMA_SECS: f64 = 0.035;
/// S2 burst: carrier, peak amplitude (volts), Gaussian sigma (seconds).
pub const S2_FREQ_HZ: f64 = 60.0;
pub const S2_AMPLITUDE: f64 = 0.0025;
pub const S2_SIGMA_SECS: f64 = 0.025;
/// Murmur noise band and in-window RMS.
pub const MURMUR_BAND_HZ: (f64, f64) = (150.0, 400.0);
pub const MURMUR_RMS: f64 = 0.0012;
/// Lung surrogate noise band and RMS.
pub const LUNG_BAND_HZ: (f64, f64) = (100.0, 900.0);
pub const LUNG_RMS: f64 = 0.0015;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("bpm must be positive and finite, got {0}")]
    InvalidBpm(f64),
    #[error("duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
}

/// Which test signal to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Heart,
    Murmur,
    Lung,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthParams {
    pub kind: SynthKind,
    pub duration_secs: f64,
    pub bpm: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            kind: SynthKind::Heart,
            duration_secs: 10.0,
            bpm: 60.0,
            sample_rate: 4000,
            seed: 0,
        }
    }
}

/// Beat onsets (= S1 burst centers) for the given tempo and duration.
pub fn s1_times(bpm: f64, duration_secs: f64) -> Vec<f64> {
    let period = 60.0 / bpm;
    let mut times = Vec::new();
    let mut t = FIRST_BEAT_SECS;
    while t < duration_secs - 0.2 {
        times.push(t);
        t += period;
    }
    times
}

/// S2 burst centers, one per beat.
pub fn s2_times(bpm: f64, duration_secs: f64) -> Vec<f64> {
    s1_times(bpm, duration_secs)
        .into_iter()
        .map(|t| t + S2_DELAY_SECS)
        .filter(|&t| t < duration_secs - 0.1)
        .collect()
}

fn add_burst(samples: &mut [f64], rate: f64, center: f64, freq: f64, amp: f64, sigma: f64) {
    let lo = ((center - 4.0 * sigma) * rate).max(0.0) as usize;
    let hi = (((center + 4.0 * sigma) * rate).ceil() as usize).min(samples.len());
    for (i, s) in samples.iter_mut().enumerate().take(hi).skip(lo) {
        let t = i as f64 / rate - center;
        *s += amp * (-t * t / (2.0 * sigma * sigma)).exp() * (2.0 * PI * freq * t).sin();
    }
}

fn band_noise(
    n: usize,
    rate: u32,
    band: (f64, f64),
    rms: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, SynthError> {
    let white: Vec<f64> = (0..n)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let buf = AudioBuffer::new(rate, white).map_err(DspError::from)?;
    let mut sections = design_bandpass(band.0, band.1, rate as f64)?;
    let shaped = cascade_apply(&buf, &mut sections)?;
    let actual = shaped.rms();
    let scale = if actual > 0.0 { rms / actual } else { 0.0 };
    Ok(shaped.samples().iter().map(|s| s * scale).collect())
}

/// Generates one deterministic test signal.
pub fn synthesize(params: &SynthParams) -> Result<AudioBuffer, SynthError> {
    if !(params.bpm.is_finite() && params.bpm > 0.0) {
        return Err(SynthError::InvalidBpm(params.bpm));
    }
    if !(params.duration_secs.is_finite() && params.duration_secs > 0.0) {
        return Err(SynthError::InvalidDuration(params.duration_secs));
    }
    let rate = params.sample_rate as f64;
    let n = (params.duration_secs * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut samples = vec![0.0; n];

    match params.kind {
        SynthKind::Heart | SynthKind::Murmur => {
            for t in s1_times(params.bpm, params.duration_secs) {
                add_burst(&mut samples, rate, t, S1_FREQ_HZ, S1_AMPLITUDE, S1_SIGMA_SECS);
            }
            for t in s2_times(params.bpm, params.duration_secs) {
                add_burst(&mut samples, rate, t, S2_FREQ_HZ, S2_AMPLITUDE, S2_SIGMA_SECS);
            }
            if params.kind == SynthKind::Murmur {
                let noise = band_noise(n, params.sample_rate, MURMUR_BAND_HZ, MURMUR_RMS, &mut rng)?;
                // Late systole: between S1 decay and S2 onset.
                for t0 in s1_times(params.bpm, params.duration_secs) {
                    let start = ((t0 + 0.12) * rate) as usize;
                    let end = (((t0 + 0.27) * rate) as usize).min(n);
                    for i in start..end {
                        // Raised-cosine fade keeps the murmur window clickless.
                        let frac = (i - start) as f64 / (end - start).max(1) as f64;
                        let fade = 0.5 * (1.0 - (2.0 * PI * frac).cos());
                        samples[i] += noise[i] * fade;
                    }
                }
            }
        }
        SynthKind::Lung => {
            samples = band_noise(n, params.sample_rate, LUNG_BAND_HZ, LUNG_RMS, &mut rng)?;
        }
    }
    Ok(AudioBuffer::new(params.sample_rate, samples).map_err(DspError::from)?)
}
