//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Expected values come from independent oracles computed inside this file:
//! closed-form filter magnitudes, arithmetic on the link budget, exhaustive
//! code scans, and synthesized ground-truth timings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use stetho_core::analysis::{
    band_energy, detect_heart_sounds, estimate_heart_rate, BandSpec, HeartLabel,
};
use stetho_core::dsp::{
    dequantize_dac, dequantize_sample, design_lowpass, filter_apply, power_amplify, preamplify,
    quantize_sample, run_transmit_chain, ChainConfig, Cutoff, MAX_CODE,
};
use stetho_core::service::{listen_on, PacketSink, ServeConfig, ServiceError, StreamServer};
use stetho_core::synth::{s1_times, s2_times, synthesize, SynthKind, SynthParams};
use stetho_core::transport::{
    concat_blocks, decode_packet, encode_packet, link_transmit, packetize, reassemble,
    schedule_packets, Concealment, LinkParams, Packet, MAX_CODES_PER_PACKET,
};
use stetho_core::wav::{decode_wav, encode_wav};
use stetho_core::AudioBuffer;

const RATE: u32 = 4000;

fn sine(freq: f64, amplitude: f64, secs: f64) -> AudioBuffer {
    let n = (secs * RATE as f64).round() as usize;
    let samples = (0..n)
        .map(|i| amplitude * (2.0 * PI * freq * i as f64 / RATE as f64).sin())
        .collect();
    AudioBuffer::new(RATE, samples).unwrap()
}

/// Steady-state gain of a freshly designed low-pass at one frequency,
/// measured as an RMS ratio over the final stretch of a 3 s sine.
fn measured_lowpass_gain(cutoff: f64, freq: f64) -> f64 {
    let mut section = design_lowpass(cutoff, 1.6, RATE as f64).unwrap();
    let input = sine(freq, 1.0, 3.0);
    let output = filter_apply(&input, &mut section).unwrap();
    let skip = RATE as usize;
    let tail_rms = |buf: &AudioBuffer| {
        let tail = &buf.samples()[skip..];
        (tail.iter().map(|s| s * s).sum::<f64>() / tail.len() as f64).sqrt()
    };
    tail_rms(&output) / tail_rms(&input)
}

/// Analytic magnitude of the implemented filter class: the second-order
/// Butterworth response at the bilinear-warped frequency ratio.
fn analytic_lowpass_mag(freq: f64, cutoff: f64) -> f64 {
    let ratio = (PI * freq / RATE as f64).tan() / (PI * cutoff / RATE as f64).tan();
    1.0 / (1.0 + ratio.powi(4)).sqrt()
}

#[test]
fn acceptance_01_filter_response() {
    let sweeps: [(f64, &[f64]); 2] = [
        (
            100.0,
            &[
                10.0, 14.0, 20.0, 30.0, 45.0, 60.0, 80.0, 100.0, 130.0, 180.0, 260.0, 400.0,
                640.0, 1000.0, 1400.0, 1800.0,
            ],
        ),
        (
            1000.0,
            &[100.0, 140.0, 220.0, 350.0, 500.0, 700.0, 900.0, 1000.0, 1200.0, 1500.0, 1800.0],
        ),
    ];
    for (cutoff, freqs) in sweeps {
        for &freq in freqs {
            let measured = measured_lowpass_gain(cutoff, freq);
            let expected = 1.6 * analytic_lowpass_mag(freq, cutoff);
            let rel = (measured - expected).abs() / expected;
            assert!(
                rel < 0.02,
                "cutoff {cutoff} Hz at {freq} Hz: measured {measured}, analytic {expected}, rel {rel}"
            );
        }

        // -3 dB point located by bisection on the measured response.
        let target = 1.6 / 2.0_f64.sqrt();
        let (mut lo, mut hi) = (0.5 * cutoff, 1.5 * cutoff);
        for _ in 0..22 {
            let mid = 0.5 * (lo + hi);
            if measured_lowpass_gain(cutoff, mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let knee = 0.5 * (lo + hi);
        assert!(
            (knee - cutoff).abs() / cutoff < 0.05,
            "cutoff {cutoff} Hz: -3 dB knee at {knee} Hz"
        );
        println!("[acceptance 01] filter response, {cutoff} Hz cutoff: PASS (knee {knee:.1} Hz)");
    }
}

#[test]
fn acceptance_02_stage_gains() {
    let input = sine(50.0, 0.005, 1.0);
    let out = preamplify(&input, 20.0).unwrap();
    let ratio = out.rms() / input.rms();
    assert!(
        (ratio - 20.0).abs() <= 1e-9,
        "preamp RMS ratio {ratio} differs from 20 beyond 1e-9"
    );

    let hot = AudioBuffer::new(RATE, vec![0.5, -0.5, 0.05]).unwrap();
    let clipped = power_amplify(&hot, 1.0, 20.0, 2.5).unwrap();
    assert_eq!(clipped.samples()[0], 2.5);
    assert_eq!(clipped.samples()[1], -2.5);
    assert!((clipped.samples()[2] - 1.0).abs() < 1e-12);
    assert!(clipped.peak() <= 2.5);
    println!("[acceptance 02] stage gains: PASS (preamp ratio {ratio})");
}

#[test]
fn acceptance_03_quantization() {
    let fs = 2.5;
    for code in 0..=MAX_CODE {
        let v = dequantize_sample(code, fs);
        assert_eq!(quantize_sample(v, fs), code, "DAC->ADC identity at {code}");
    }

    let lsb = 2.0 * fs / MAX_CODE as f64;
    let n = 100_000;
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let v = -fs + 2.0 * fs * i as f64 / n as f64;
        let err = (dequantize_sample(quantize_sample(v, fs), fs) - v).abs();
        worst = worst.max(err);
        assert!(err <= lsb, "ADC->DAC error {err} at {v} exceeds one LSB {lsb}");
    }
    println!("[acceptance 03] quantization: PASS (worst round-trip error {worst:.3e} V, LSB {lsb:.3e} V)");
}

#[test]
fn acceptance_04_codec_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    for case in 0..10_000 {
        let count = rng.random_range(1..=MAX_CODES_PER_PACKET);
        let codes: Vec<u16> = (0..count).map(|_| rng.random_range(0..=MAX_CODE)).collect();
        let flags = if rng.random_bool(0.5) {
            stetho_core::transport::flags::CUTOFF_1000
        } else {
            0
        };
        let packet = Packet::new(
            rng.random::<u16>(),
            rng.random::<u32>(),
            flags,
            codes,
        )
        .unwrap();
        let bytes = encode_packet(&packet).unwrap();
        let back = decode_packet(&bytes).unwrap();
        assert_eq!(back, packet, "round-trip failure on case {case}");
    }
    println!("[acceptance 04] codec round trip over 10000 seeded packets: PASS");
}

#[test]
fn acceptance_05_lossless_end_to_end() {
    let heart = synthesize(&SynthParams::default()).unwrap(); // 10 s
    let cfg = ChainConfig::default();
    let block = run_transmit_chain(&heart, &cfg).unwrap();
    let sent_codes = block.codes().to_vec();

    let outbound = schedule_packets(packetize(&block, 0, 0), RATE);
    let params = LinkParams {
        loss_prob: 0.0,
        jitter_max: 0.0,
        ..LinkParams::default()
    };
    let run = link_transmit(&outbound, &params).unwrap();
    let (blocks, stats) = reassemble(&run.deliveries, RATE, 0.1, Concealment::ZeroFill).unwrap();
    let received = concat_blocks(&blocks);

    assert_eq!(received, sent_codes, "receiver codes differ from transmitter");
    assert_eq!(stats.late_discarded, 0);
    assert!(
        (run.stats.utilization - 0.28).abs() <= 0.02,
        "utilization {} outside 0.28 +/- 0.02",
        run.stats.utilization
    );
    println!(
        "[acceptance 05] lossless end-to-end 10 s stream: PASS (utilization {:.3})",
        run.stats.utilization
    );
}

#[test]
fn acceptance_06_lossy_determinism_and_conservation() {
    let heart = synthesize(&SynthParams::default()).unwrap();
    let cfg = ChainConfig::default();
    let block = run_transmit_chain(&heart, &cfg).unwrap();
    let outbound = schedule_packets(packetize(&block, 0, 0), RATE);
    let params = LinkParams {
        loss_prob: 0.1,
        seed: 7,
        ..LinkParams::default()
    };

    let run_once = || {
        let run = link_transmit(&outbound, &params).unwrap();
        let (blocks, stats) =
            reassemble(&run.deliveries, RATE, 0.1, Concealment::ZeroFill).unwrap();
        (run, concat_blocks(&blocks), stats)
    };
    let (run_a, codes_a, jitter_a) = run_once();
    let (run_b, codes_b, jitter_b) = run_once();
    assert_eq!(run_a, run_b, "link runs differ despite identical seed");
    assert_eq!(codes_a, codes_b, "reassembled streams differ");
    assert_eq!(jitter_a, jitter_b);

    let late = jitter_a.late_discarded;
    let delivered_and_played = jitter_a.accepted;
    assert_eq!(
        delivered_and_played + run_a.stats.dropped + late + jitter_a.duplicates,
        run_a.stats.sent,
        "conservation violated"
    );
    assert!(run_a.stats.dropped > 0, "seeded run should drop something");
    println!(
        "[acceptance 06] lossy determinism: PASS (sent {} = played {} + dropped {} + late {})",
        run_a.stats.sent, delivered_and_played, run_a.stats.dropped, late
    );
}

fn chain_output(input: &AudioBuffer, cutoff: Cutoff) -> (AudioBuffer, f64) {
    let cfg = ChainConfig {
        cutoff,
        ..ChainConfig::default()
    };
    let block = run_transmit_chain(input, &cfg).unwrap();
    let out = dequantize_dac(&block, cfg.full_scale).unwrap();
    (out, cfg.nominal_gain())
}

#[test]
fn acceptance_07_filter_selection_property() {
    let heart = synthesize(&SynthParams::default()).unwrap();
    let heart_band = BandSpec::new(20.0, 100.0);
    let (out, gain) = chain_output(&heart, Cutoff::Hz100);
    let retained = band_energy(&out, heart_band).unwrap()
        / (gain * gain * band_energy(&heart, heart_band).unwrap());
    assert!(
        retained >= 0.90,
        "heart band retention {retained} below 0.90"
    );

    let lung = synthesize(&SynthParams {
        kind: SynthKind::Lung,
        ..SynthParams::default()
    })
    .unwrap();
    let (wide, gain_wide) = chain_output(&lung, Cutoff::Hz1000);
    let retained_wide = wide.mean_square() / (gain_wide * gain_wide * lung.mean_square());
    let (narrow, gain_narrow) = chain_output(&lung, Cutoff::Hz100);
    let retained_narrow = narrow.mean_square() / (gain_narrow * gain_narrow * lung.mean_square());
    assert!(
        retained_wide >= 0.80,
        "lung retention under 1000 Hz cutoff {retained_wide} below 0.80"
    );
    assert!(
        retained_narrow < 0.80,
        "lung retention under 100 Hz cutoff {retained_narrow} should fall below 0.80"
    );
    println!(
        "[acceptance 07] filter selection: PASS (heart {retained:.3}, lung {retained_wide:.3} vs {retained_narrow:.3})"
    );
}

struct DetectorScore {
    rate_bpm: f64,
    s1_precision: f64,
    s1_recall: f64,
    labels_all_correct: bool,
    events: usize,
}

fn score_detector(buf: &AudioBuffer, bpm: f64) -> DetectorScore {
    let events = detect_heart_sounds(buf).unwrap();
    let truth_s1 = s1_times(bpm, buf.duration_secs());
    let truth_s2 = s2_times(bpm, buf.duration_secs());
    let tolerance = 0.075;

    let detected_s1: Vec<f64> = events
        .iter()
        .filter(|e| e.label == HeartLabel::S1)
        .map(|e| e.time)
        .collect();
    let detected_s2: Vec<f64> = events
        .iter()
        .filter(|e| e.label == HeartLabel::S2)
        .map(|e| e.time)
        .collect();
    let hits = |truth: &[f64], detected: &[f64]| {
        truth
            .iter()
            .filter(|t| detected.iter().any(|d| (d - **t).abs() <= tolerance))
            .count()
    };
    let s1_hits = hits(&truth_s1, &detected_s1);
    let s2_hits = hits(&truth_s2, &detected_s2);
    let labels_all_correct = s1_hits == truth_s1.len()
        && s2_hits == truth_s2.len()
        && detected_s1.len() == truth_s1.len()
        && detected_s2.len() == truth_s2.len();
    DetectorScore {
        rate_bpm: estimate_heart_rate(&events).unwrap(),
        s1_precision: s1_hits as f64 / detected_s1.len().max(1) as f64,
        s1_recall: s1_hits as f64 / truth_s1.len() as f64,
        labels_all_correct,
        events: events.len(),
    }
}

#[test]
fn acceptance_08_analysis() {
    for bpm in [60.0, 80.0] {
        let clean = synthesize(&SynthParams {
            bpm,
            ..SynthParams::default()
        })
        .unwrap();
        let score = score_detector(&clean, bpm);
        assert!(
            (score.rate_bpm - bpm).abs() <= 2.0,
            "estimated {} bpm for a {bpm} bpm signal",
            score.rate_bpm
        );
        assert!(
            score.labels_all_correct,
            "labels wrong at zero noise for {bpm} bpm ({} events)",
            score.events
        );

        // 20 dB SNR additive white noise, seeded.
        let sigma = (clean.mean_square() / 10f64.powf(20.0 / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(0xD1CE);
        let noisy_samples: Vec<f64> = clean
            .samples()
            .iter()
            .map(|s| {
                s + sigma
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        let noisy = AudioBuffer::new(RATE, noisy_samples).unwrap();
        let noisy_score = score_detector(&noisy, bpm);
        assert!(
            noisy_score.s1_precision >= 0.9 && noisy_score.s1_recall >= 0.9,
            "S1 precision {} / recall {} at 20 dB SNR for {bpm} bpm",
            noisy_score.s1_precision,
            noisy_score.s1_recall
        );
        println!(
            "[acceptance 08] analysis at {bpm} bpm: PASS (rate {:.1}, noisy precision {:.2} recall {:.2})",
            score.rate_bpm, noisy_score.s1_precision, noisy_score.s1_recall
        );
    }
}

/// Collects raw re-encoded frames, mirroring what a recorder persists.
#[derive(Default)]
struct CollectSink {
    frames: Vec<Vec<u8>>,
    closed: bool,
}

impl PacketSink for CollectSink {
    fn on_packet(&mut self, packet: Packet) -> Result<(), ServiceError> {
        self.frames.push(encode_packet(&packet)?);
        Ok(())
    }
    fn on_close(&mut self) -> Result<(), ServiceError> {
        self.closed = true;
        Ok(())
    }
}

#[test]
fn acceptance_09_service_fan_out() {
    use std::net::TcpStream;
    use std::sync::mpsc;
    use std::thread;
    use std::time::{Duration, Instant};

    // Small kernel send buffers so the 256-frame queue is the binding
    // limit for the stalled listener.
    let server = StreamServer::bind(ServeConfig {
        send_buffer_bytes: Some(8 * 1024),
        ..ServeConfig::default()
    })
    .unwrap();
    let addr = server.stream_addr();

    // Three well-behaved listeners.
    let mut handles = Vec::new();
    let (ready_tx, ready_rx) = mpsc::channel();
    for _ in 0..3 {
        let ready = ready_tx.clone();
        handles.push(thread::spawn(move || {
            let stream = TcpStream::connect(addr).unwrap();
            ready.send(()).unwrap();
            let mut sink = CollectSink::default();
            let stats = listen_on(stream, &mut sink).unwrap();
            (sink, stats)
        }));
    }
    // One listener that connects and never reads.
    let stalled = TcpStream::connect(addr).unwrap();
    for _ in 0..3 {
        ready_rx.recv_timeout(Duration::from_secs(5)).unwrap();
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    while server.session_count() < 4 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(2));
    }
    assert_eq!(server.session_count(), 4);

    // 6000 frames (~500 kB) at roughly 2000 frames/s: far beyond what the
    // stalled listener's kernel buffers absorb, comfortably within what a
    // reading listener drains.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut source_frames = Vec::new();
    for i in 0..6000u32 {
        let codes: Vec<u16> = (0..48).map(|_| rng.random_range(0..=MAX_CODE)).collect();
        let packet = Packet::new(i as u16, i * 48, 0, codes).unwrap();
        let frame = encode_packet(&packet).unwrap();
        server.publish_frame(&frame).unwrap();
        source_frames.push(frame);
        if i % 16 == 0 {
            thread::sleep(Duration::from_millis(8));
        }
    }
    let deadline = Instant::now() + Duration::from_secs(10);
    while server.session_count() > 3 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(5));
    }
    assert_eq!(
        server.session_count(),
        3,
        "stalled listener was not disconnected"
    );
    server.shutdown();

    let mut recordings = Vec::new();
    for handle in handles {
        let (sink, stats) = handle.join().unwrap();
        assert!(sink.closed, "listener did not see a clean end of stream");
        assert_eq!(stats.packets, 6000);
        recordings.push(sink.frames);
    }
    assert_eq!(recordings[0], source_frames);
    assert_eq!(recordings[0], recordings[1]);
    assert_eq!(recordings[1], recordings[2]);

    // The stalled socket was shut down by the server.
    drop(stalled);
    println!("[acceptance 09] service fan-out: PASS (3 identical recordings, slow listener cut)");
}

#[test]
fn acceptance_10_wav_round_trip() {
    let fs = 2.5;
    let mut rng = ChaCha8Rng::seed_from_u64(0xABCD);
    let samples: Vec<f64> = (0..4000).map(|_| rng.random_range(-2.5..2.5)).collect();
    let buf = AudioBuffer::new(RATE, samples).unwrap();
    let bytes = encode_wav(&buf, fs).unwrap();

    // Header byte-exact: canonical 44-byte RIFF/WAVE PCM header.
    let data_len = (buf.len() * 2) as u32;
    let mut header = Vec::new();
    header.extend_from_slice(b"RIFF");
    header.extend_from_slice(&(36 + data_len).to_le_bytes());
    header.extend_from_slice(b"WAVE");
    header.extend_from_slice(b"fmt ");
    header.extend_from_slice(&16u32.to_le_bytes());
    header.extend_from_slice(&1u16.to_le_bytes());
    header.extend_from_slice(&1u16.to_le_bytes());
    header.extend_from_slice(&RATE.to_le_bytes());
    header.extend_from_slice(&(RATE * 2).to_le_bytes());
    header.extend_from_slice(&2u16.to_le_bytes());
    header.extend_from_slice(&16u16.to_le_bytes());
    header.extend_from_slice(b"data");
    header.extend_from_slice(&data_len.to_le_bytes());
    assert_eq!(&bytes[..44], &header[..], "header not byte-exact");

    let back = decode_wav(&bytes, fs).unwrap();
    assert_eq!(back.sample_rate(), RATE);
    assert_eq!(back.len(), buf.len());
    let lsb = fs / 32767.0;
    let mut worst: f64 = 0.0;
    for (a, b) in buf.samples().iter().zip(back.samples()) {
        worst = worst.max((a - b).abs());
        assert!((a - b).abs() <= lsb, "sample error beyond one LSB");
    }
    println!("[acceptance 10] WAV round trip: PASS (worst error {worst:.3e} V, LSB {lsb:.3e} V)");
}
