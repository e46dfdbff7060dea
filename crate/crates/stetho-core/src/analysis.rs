//! Heart-sound detection and heart-rate estimation.
//!
//! S1 carries most of its energy around 30-45 Hz, S2 around 50-70 Hz with a
//! higher pitch. The detector band-passes the signal to the heart band,
//! tracks a normalized Shannon-energy envelope, picks peaks over an adaptive
//! threshold, and labels each peak by which band dominates around it.

use crate::audio::AudioBuffer;
use crate::dsp::{cascade_apply, design_bandpass, DspError};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("band [{lo}, {hi}] Hz does not fit below the {nyquist} Hz Nyquist limit")]
    BandOutOfRange { lo: f64, hi: f64, nyquist: f64 },
    #[error("buffer is {got:.3} s long, detector needs at least {need:.1} s")]
    BufferTooShort { got: f64, need: f64 },
    #[error("heart-rate estimate needs at least 2 S1 events, found {found}")]
    InsufficientS1Events { found: usize },
}

/// A frequency band in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSpec {
    pub lo: f64,
    pub hi: f64,
}

impl BandSpec {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), AnalysisError> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.lo.is_finite() && self.hi.is_finite())
            || self.lo <= 0.0
            || self.lo >= self.hi
            || self.hi >= nyquist
        {
            return Err(AnalysisError::BandOutOfRange {
                lo: self.lo,
                hi: self.hi,
                nyquist,
            });
        }
        Ok(())
    }
}

/// S1 marks the start of systole, S2 the start of diastole.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeartLabel {
    S1,
    S2,
}

impl std::fmt::Display for HeartLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeartLabel::S1 => write!(f, "S1"),
            HeartLabel::S2 => write!(f, "S2"),
        }
    }
}

/// One detected heart sound with its band-energy evidence.
///
/// The label always agrees with the evidence: S1 iff
/// `energy_s1_band >= energy_s2_band`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeartEvent {
    /// Envelope-peak time in seconds.
    pub time: f64,
    pub label: HeartLabel,
    /// Mean squared amplitude in the 30-45 Hz band around the peak.
    pub energy_s1_band: f64,
    /// Mean squared amplitude in the 50-70 Hz band around the peak.
    pub energy_s2_band: f64,
}

/// Detector tuning. The defaults are the contract; everything is exposed so
/// experiments can deviate without forking the pipeline.
#[derive(Debug, Clone, Copy)]
pub struct DetectorConfig {
    /// Envelope frame length in seconds.
    pub frame_secs: f64,
    /// Envelope hop in seconds.
    pub hop_secs: f64,
    /// Threshold is envelope mean plus this many standard deviations.
    pub threshold_sigma: f64,
    /// Minimum spacing between accepted peaks; the earliest peak wins.
    pub refractory_secs: f64,
    /// Band-pass applied before envelope extraction.
    pub detect_band: BandSpec,
    /// Evidence band for S1.
    pub s1_band: BandSpec,
    /// Evidence band for S2.
    pub s2_band: BandSpec,
    /// Half-width of the classification window around each peak.
    pub class_window_secs: f64,
    /// Shortest analyzable buffer.
    pub min_duration_secs: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            frame_secs: 0.020,
            hop_secs: 0.010,
            threshold_sigma: 0.5,
            refractory_secs: 0.200,
            detect_band: BandSpec::new(20.0, 150.0),
            s1_band: BandSpec::new(30.0, 45.0),
            s2_band: BandSpec::new(50.0, 70.0),
            class_window_secs: 0.050,
            min_duration_secs: 2.0,
        }
    }
}

/// Mean squared amplitude of `buf` restricted to `band` by a fourth-order
/// Butterworth band-pass (two cascaded biquads).
pub fn band_energy(buf: &AudioBuffer, band: BandSpec) -> Result<f64, AnalysisError> {
    band.validate(buf.sample_rate())?;
    let mut sections = design_bandpass(band.lo, band.hi, buf.sample_rate() as f64)?;
    let filtered = cascade_apply(buf, &mut sections)?;
    Ok(filtered.mean_square())
}

fn mean_square_window(samples: &[f64], lo: usize, hi: usize) -> f64 {
    let window = &samples[lo.min(samples.len())..hi.min(samples.len())];
    if window.is_empty() {
        return 0.0;
    }
    window.iter().map(|s| s * s).sum::<f64>() / window.len() as f64
}

/// Runs the full S1/S2 detection pipeline with the default configuration.
pub fn detect_heart_sounds(buf: &AudioBuffer) -> Result<Vec<HeartEvent>, AnalysisError> {
    detect_heart_sounds_with(buf, &DetectorConfig::default())
}

pub fn detect_heart_sounds_with(
    buf: &AudioBuffer,
    cfg: &DetectorConfig,
) -> Result<Vec<HeartEvent>, AnalysisError> {
    if buf.duration_secs() < cfg.min_duration_secs {
        return Err(AnalysisError::BufferTooShort {
            got: buf.duration_secs(),
            need: cfg.min_duration_secs,
        });
    }
    let rate = buf.sample_rate() as f64;
    cfg.detect_band.validate(buf.sample_rate())?;

    let mut detect_filter = design_bandpass(cfg.detect_band.lo, cfg.detect_band.hi, rate)?;
    let banded = cascade_apply(buf, &mut detect_filter)?;
    let peak = banded.peak();
    if peak == 0.0 {
        return Ok(Vec::new());
    }

    // Per-sample normalized Shannon energy; the x^2 ln x^2 weighting lifts
    // mid-level heart sounds over both murmur floor and isolated spikes.
    let shannon: Vec<f64> = banded
        .samples()
        .iter()
        .map(|&x| {
            let p = (x / peak) * (x / peak);
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .collect();

    let frame = (cfg.frame_secs * rate).round().max(1.0) as usize;
    let hop = (cfg.hop_secs * rate).round().max(1.0) as usize;
    if shannon.len() < frame {
        return Ok(Vec::new());
    }
    let envelope: Vec<f64> = (0..=(shannon.len() - frame) / hop)
        .map(|k| shannon[k * hop..k * hop + frame].iter().sum::<f64>() / frame as f64)
        .collect();

    let mean = envelope.iter().sum::<f64>() / envelope.len() as f64;
    let var = envelope.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
        / envelope.len() as f64;
    let threshold = mean + cfg.threshold_sigma * var.sqrt();

    // Local maxima above threshold; a greedy scan in time order makes the
    // earliest peak win inside each refractory interval.
    let mut peak_times = Vec::new();
    let mut last_accepted = f64::NEG_INFINITY;
    for k in 0..envelope.len() {
        let rising = k == 0 || envelope[k] > envelope[k - 1];
        let falling = k + 1 == envelope.len() || envelope[k] >= envelope[k + 1];
        if envelope[k] > threshold && rising && falling {
            let t = (k * hop + frame / 2) as f64 / rate;
            if t - last_accepted >= cfg.refractory_secs {
                peak_times.push(t);
                last_accepted = t;
            }
        }
    }

    let mut s1_filter = design_bandpass(cfg.s1_band.lo, cfg.s1_band.hi, rate)?;
    let mut s2_filter = design_bandpass(cfg.s2_band.lo, cfg.s2_band.hi, rate)?;
    let s1_signal = cascade_apply(buf, &mut s1_filter)?;
    let s2_signal = cascade_apply(buf, &mut s2_filter)?;

    let half = (cfg.class_window_secs * rate).round() as usize;
    let events = peak_times
        .into_iter()
        .map(|t| {
            let center = (t * rate).round() as usize;
            let lo = center.saturating_sub(half);
            let hi = center + half + 1;
            let energy_s1_band = mean_square_window(s1_signal.samples(), lo, hi);
            let energy_s2_band = mean_square_window(s2_signal.samples(), lo, hi);
            let label = if energy_s1_band >= energy_s2_band {
                HeartLabel::S1
            } else {
                HeartLabel::S2
            };
            HeartEvent {
                time: t,
                label,
                energy_s1_band,
                energy_s2_band,
            }
        })
        .collect();
    Ok(events)
}

/// Heart rate as `60 / median(inter-S1 intervals)`, in beats per minute.
///
/// The median keeps a single missed beat from skewing the estimate.
pub fn estimate_heart_rate(events: &[HeartEvent]) -> Result<f64, AnalysisError> {
    let s1_times: Vec<f64> = events
        .iter()
        .filter(|e| e.label == HeartLabel::S1)
        .map(|e| e.time)
        .collect();
    if s1_times.len() < 2 {
        return Err(AnalysisError::InsufficientS1Events {
            found: s1_times.len(),
        });
    }
    let mut intervals: Vec<f64> = s1_times.windows(2).map(|w| w[1] - w[0]).collect();
    intervals.sort_by(|a, b| a.total_cmp(b));
    let mid = intervals.len() / 2;
    let median = if intervals.len() % 2 == 1 {
        intervals[mid]
    } else {
        (intervals[mid - 1] + intervals[mid]) / 2.0
    };
    Ok(60.0 / median)
}
