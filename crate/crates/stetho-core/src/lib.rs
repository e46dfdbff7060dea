//! Digital twin of a wireless electronic stethoscope.
//!
//! The crate models the full signal path of a body-sound telemetry system:
//!
//! * [`dsp`] — the transmitter front end (preamplifier, selectable low-pass
//!   filter, variable-gain power amplifier with rail clipping) and 12-bit
//!   ADC/DAC conversion,
//! * [`transport`] — packetization of 12-bit sample codes into radio-sized
//!   frames, a deterministic 250 kbps lossy-link simulator, and a jitter
//!   buffer with loss concealment,
//! * [`analysis`] — S1/S2 heart-sound detection and heart-rate estimation
//!   from band energies,
//! * [`wav`] — canonical mono 16-bit PCM WAV storage,
//! * [`service`] — a TCP broadcast server that fans the live packet stream
//!   out to any number of listeners plus a line-oriented control protocol,
//! * [`synth`] — deterministic heart/murmur/lung test-signal generators.
//!
//! Signals are real-valued voltages carried by [`audio::AudioBuffer`];
//! quantized sample codes travel in [`dsp::SampleBlock`] values.

pub mod analysis;
pub mod audio;
pub mod dsp;
pub mod service;
pub mod synth;
pub mod transport;
pub mod wav;

pub use audio::AudioBuffer;
pub use dsp::{ChainConfig, Cutoff, SampleBlock, TransmitChain};
