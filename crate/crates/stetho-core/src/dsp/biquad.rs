//! Second-order IIR sections and the filter designs used by the chain.
//!
//! All designs go through the bilinear transform with frequency pre-warping,
//! so the -3 dB points land exactly on the requested cutoffs. Coefficients
//! use the positive-feedback sign convention:
//!
//! `y[n] = b0*x[n] + b1*x[n-1] + b2*x[n-2] - a1*y[n-1] - a2*y[n-2]`

use crate::audio::AudioBuffer;
use crate::dsp::DspError;
use std::f64::consts::{PI, SQRT_2};

/// One biquad stage with its two delay-state values (direct form II transposed).
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadSection {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    s1: f64,
    s2: f64,
}

impl BiquadSection {
    /// Builds a section, rejecting coefficient sets whose poles are not
    /// strictly inside the unit circle.
    pub fn new(b0: f64, b1: f64, b2: f64, a1: f64, a2: f64) -> Result<Self, DspError> {
        for c in [b0, b1, b2, a1, a2] {
            if !c.is_finite() {
                return Err(DspError::UnstableFilter { a1, a2 });
            }
        }
        // Stability triangle for z^2 + a1*z + a2.
        if !(a2.abs() < 1.0 && a1.abs() < 1.0 + a2) {
            return Err(DspError::UnstableFilter { a1, a2 });
        }
        Ok(Self {
            b0,
            b1,
            b2,
            a1,
            a2,
            s1: 0.0,
            s2: 0.0,
        })
    }

    pub fn coefficients(&self) -> (f64, f64, f64, f64, f64) {
        (self.b0, self.b1, self.b2, self.a1, self.a2)
    }

    /// Feeds one sample through the section, advancing its state.
    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.s1;
        self.s1 = self.b1 * x - self.a1 * y + self.s2;
        self.s2 = self.b2 * x - self.a2 * y;
        y
    }

    /// Clears the delay state.
    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    /// Gain at DC, `H(z=1)`.
    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Magnitude response at `freq` for a signal sampled at `sample_rate`.
    pub fn magnitude_at(&self, freq: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq / sample_rate;
        let (c1, s1) = (w.cos(), w.sin());
        let (c2, s2) = ((2.0 * w).cos(), (2.0 * w).sin());
        let num_re = self.b0 + self.b1 * c1 + self.b2 * c2;
        let num_im = -(self.b1 * s1 + self.b2 * s2);
        let den_re = 1.0 + self.a1 * c1 + self.a2 * c2;
        let den_im = -(self.a1 * s1 + self.a2 * s2);
        ((num_re * num_re + num_im * num_im) / (den_re * den_re + den_im * den_im)).sqrt()
    }
}

/// Streaming application of a section to a whole buffer.
///
/// State carries across consecutive calls on the same section, so a long
/// stream may be processed in arbitrary block sizes.
pub fn filter_apply(buf: &AudioBuffer, section: &mut BiquadSection) -> Result<AudioBuffer, DspError> {
    let out: Vec<f64> = buf.samples().iter().map(|&x| section.process(x)).collect();
    Ok(AudioBuffer::new(buf.sample_rate(), out)?)
}

fn check_band_edge(cutoff: f64, sample_rate: f64) -> Result<(), DspError> {
    if !(cutoff.is_finite() && cutoff > 0.0) || cutoff >= sample_rate / 2.0 {
        return Err(DspError::CutoffOutOfRange {
            cutoff,
            sample_rate,
        });
    }
    Ok(())
}

/// Second-order Butterworth low-pass with a passband gain of `filter_gain`.
pub fn design_lowpass(
    cutoff: f64,
    filter_gain: f64,
    sample_rate: f64,
) -> Result<BiquadSection, DspError> {
    check_band_edge(cutoff, sample_rate)?;
    if !(filter_gain.is_finite() && filter_gain > 0.0) {
        return Err(DspError::InvalidGain(filter_gain));
    }
    let wc = (PI * cutoff / sample_rate).tan();
    let wc2 = wc * wc;
    let d = 1.0 + SQRT_2 * wc + wc2;
    BiquadSection::new(
        filter_gain * wc2 / d,
        2.0 * filter_gain * wc2 / d,
        filter_gain * wc2 / d,
        2.0 * (wc2 - 1.0) / d,
        (1.0 - SQRT_2 * wc + wc2) / d,
    )
}

/// First-order high-pass used to strip DC offset ahead of the chain.
///
/// Realized as a biquad with the second-order terms zeroed so it can share
/// the streaming path of the other sections.
pub fn design_dc_blocker(cutoff: f64, sample_rate: f64) -> Result<BiquadSection, DspError> {
    check_band_edge(cutoff, sample_rate)?;
    let wc = (PI * cutoff / sample_rate).tan();
    let k = 1.0 / (1.0 + wc);
    BiquadSection::new(k, -k, 0.0, (wc - 1.0) * k, 0.0)
}

/// Fourth-order Butterworth band-pass as two cascaded biquads.
///
/// Derived from the order-2 low-pass prototype through the standard
/// low-pass-to-band-pass substitution, then discretized per section. Unity
/// gain at the geometric center frequency, -3 dB at both band edges.
pub fn design_bandpass(
    lo: f64,
    hi: f64,
    sample_rate: f64,
) -> Result<[BiquadSection; 2], DspError> {
    check_band_edge(lo, sample_rate)?;
    check_band_edge(hi, sample_rate)?;
    if lo >= hi {
        return Err(DspError::InvalidBand { lo, hi });
    }
    let wl = (PI * lo / sample_rate).tan();
    let wh = (PI * hi / sample_rate).tan();
    let w0_sq = wl * wh;
    let bw = wh - wl;

    // Prototype poles sit at angle 3*pi/4 from the positive real axis; each
    // maps to a pair of band-pass poles via s_lp = (s^2 + w0^2) / (bw * s).
    let proto = Complex::new(-SQRT_2 / 2.0, SQRT_2 / 2.0);
    let half = proto.scale(bw / 2.0);
    let disc = (half.mul(half)).sub(Complex::new(w0_sq, 0.0)).sqrt();
    let poles = [half.add(disc), half.sub(disc)];

    let mut sections_vec = Vec::with_capacity(2);
    for p in poles {
        // Conjugate pair (s - p)(s - p̄) = s^2 + c1 s + c0, numerator bw * s.
        let c1 = -2.0 * p.re;
        let c0 = p.re * p.re + p.im * p.im;
        let d0 = 1.0 + c1 + c0;
        sections_vec.push(BiquadSection::new(
            bw / d0,
            0.0,
            -bw / d0,
            (2.0 * c0 - 2.0) / d0,
            (1.0 - c1 + c0) / d0,
        )?);
    }
    let mut sections: [BiquadSection; 2] = [sections_vec.remove(0), sections_vec.remove(0)];

    // Exact normalization at the digital center frequency guards against
    // rounding in the pole arithmetic.
    let f0 = w0_sq.sqrt().atan() * sample_rate / PI;
    let gain: f64 = sections
        .iter()
        .map(|s| s.magnitude_at(f0, sample_rate))
        .product();
    sections[0] = {
        let (b0, b1, b2, a1, a2) = sections[0].coefficients();
        BiquadSection::new(b0 / gain, b1 / gain, b2 / gain, a1, a2)?
    };
    Ok(sections)
}

/// Applies a cascade of sections to one buffer, carrying state in each.
pub fn cascade_apply(
    buf: &AudioBuffer,
    sections: &mut [BiquadSection],
) -> Result<AudioBuffer, DspError> {
    let mut out = buf.clone();
    for section in sections.iter_mut() {
        out = filter_apply(&out, section)?;
    }
    Ok(out)
}

/// Minimal complex arithmetic for the pole computation above.
#[derive(Clone, Copy)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
    fn scale(self, k: f64) -> Self {
        Self::new(self.re * k, self.im * k)
    }
    fn sqrt(self) -> Self {
        let r = (self.re * self.re + self.im * self.im).sqrt();
        let theta = self.im.atan2(self.re) / 2.0;
        Self::new(r.sqrt() * theta.cos(), r.sqrt() * theta.sin())
    }
}
