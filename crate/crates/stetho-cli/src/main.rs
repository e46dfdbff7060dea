//! `stetho` — every workflow of the stethoscope twin from one binary.
//!
//! Subcommands: `process` runs the front-end chain over a WAV file,
//! `simulate` adds the lossy radio link and jitter buffer, `analyze`
//! reports S1/S2 events and heart rate, `serve`/`listen`/`control` move
//! the live packet stream over TCP, and `synth` generates the test
//! signals everything else is validated against.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::time::{Duration, Instant};
use stetho_core::analysis::{detect_heart_sounds, estimate_heart_rate, AnalysisError, HeartLabel};
use stetho_core::dsp::{
    dequantize_dac, design_dc_blocker, design_lowpass, filter_apply, power_amplify, preamplify,
    quantize_adc, ChainConfig, Cutoff, SampleBlock, TransmitChain, DC_BLOCK_CUTOFF_HZ,
};
use stetho_core::service::{
    listen_client, PacketSink, ServeConfig, ServiceError, StreamServer,
};
use stetho_core::synth::{synthesize, SynthKind, SynthParams};
use stetho_core::transport::{
    concat_blocks, flags, link_transmit, packetize, reassemble, schedule_packets, Concealment,
    LinkParams, Packet,
};
use stetho_core::wav::{read_wav, write_wav};
use stetho_core::AudioBuffer;

#[derive(Parser)]
#[command(
    name = "stetho",
    about = "Wireless electronic stethoscope twin",
    version,
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the transmitter chain over a WAV file and write the result.
    ///
    /// Stages: 10 Hz DC blocker, preamplifier, selectable low-pass,
    /// power amplifier with rail clipping, 12-bit ADC/DAC. Prints a
    /// per-stage gain summary.
    Process {
        /// Input WAV (mono 16-bit PCM).
        input: PathBuf,
        /// Output WAV.
        output: PathBuf,
        #[command(flatten)]
        chain: ChainFlags,
    },
    /// Full pipeline: chain, packetize, simulated 250 kbps link, jitter
    /// buffer, DAC, WAV. Prints link statistics.
    Simulate {
        /// Input WAV (mono 16-bit PCM).
        input: PathBuf,
        /// Output WAV.
        output: PathBuf,
        #[command(flatten)]
        chain: ChainFlags,
        #[command(flatten)]
        link: LinkFlags,
        /// Jitter buffer depth in seconds.
        #[arg(long, default_value_t = 0.1)]
        depth: f64,
        /// Loss concealment policy.
        #[arg(long, value_enum, default_value_t = ConcealmentFlag::Zero)]
        concealment: ConcealmentFlag,
    },
    /// Detect S1/S2 heart sounds and estimate the heart rate.
    ///
    /// Event lines are `time_s label s1_band_energy s2_band_energy`,
    /// followed by a heart-rate summary line.
    Analyze {
        /// Input WAV, at least 2 seconds long.
        input: PathBuf,
        /// Full-scale voltage the samples were recorded against.
        #[arg(long, default_value_t = 2.5)]
        full_scale: f64,
    },
    /// Broadcast a WAV file as a live packet stream to any number of
    /// listeners, with runtime control on a second port.
    Serve {
        /// Input WAV to stream.
        input: PathBuf,
        /// Stream bind address.
        #[arg(long, default_value = "127.0.0.1:7400")]
        bind: String,
        /// Control bind address.
        #[arg(long, default_value = "127.0.0.1:7401")]
        control_bind: String,
        /// Stream at 24x real time instead of paced playback.
        #[arg(long)]
        fast: bool,
        /// Hold the stream until this many listeners have subscribed.
        #[arg(long, default_value_t = 0)]
        wait_listeners: usize,
        #[command(flatten)]
        chain: ChainFlags,
    },
    /// Subscribe to a broadcast stream; optionally record it to WAV.
    Listen {
        /// Server stream address.
        #[arg(long, default_value = "127.0.0.1:7400")]
        connect: String,
        /// Record received audio to this WAV file.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Sample rate of the stream, used for the recording header.
        #[arg(long, default_value_t = 4000)]
        rate: u32,
        /// Full-scale voltage for the recording.
        #[arg(long, default_value_t = 2.5)]
        full_scale: f64,
    },
    /// Send one control command (e.g. `SET CUTOFF 1000`) and print the reply.
    Control {
        /// Server control address.
        #[arg(long, default_value = "127.0.0.1:7401")]
        connect: String,
        /// Command words, joined with spaces.
        #[arg(required = true)]
        command: Vec<String>,
    },
    /// Generate a deterministic test signal.
    Synth {
        /// Signal family.
        kind: SynthKindFlag,
        /// Output WAV.
        output: PathBuf,
        /// Beats per minute (heart and murmur kinds).
        #[arg(long, default_value_t = 60.0)]
        bpm: f64,
        /// Signal length in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Sample rate in Hz.
        #[arg(long, default_value_t = 4000)]
        rate: u32,
        /// Seed for the noisy components.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Full-scale voltage for the WAV mapping.
        #[arg(long, default_value_t = 2.5)]
        full_scale: f64,
    },
}

/// Front-end parameters, mirroring the chain defaults.
#[derive(Args, Clone, Copy)]
struct ChainFlags {
    /// Low-pass cutoff in Hz (100 or 1000).
    #[arg(long, default_value_t = 100, value_parser = parse_cutoff_hz)]
    cutoff: u32,
    /// Power amplifier pot position in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    volume: f64,
    /// Preamplifier gain.
    #[arg(long, default_value_t = 20.0)]
    preamp_gain: f64,
    /// Low-pass passband gain.
    #[arg(long, default_value_t = 1.6)]
    filter_gain: f64,
    /// Power amplifier gain at full pot.
    #[arg(long, default_value_t = 20.0)]
    power_gain: f64,
    /// Converter/clipping rail voltage.
    #[arg(long, default_value_t = 2.5)]
    full_scale: f64,
}

fn parse_cutoff_hz(s: &str) -> Result<u32, String> {
    let hz: u32 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    Cutoff::from_hz(hz).ok_or_else(|| format!("cutoff must be 100 or 1000, got {hz}"))?;
    Ok(hz)
}

impl ChainFlags {
    fn to_config(self, sample_rate: u32) -> Result<ChainConfig> {
        let cfg = ChainConfig {
            preamp_gain: self.preamp_gain,
            cutoff: Cutoff::from_hz(self.cutoff).expect("validated by parser"),
            filter_gain: self.filter_gain,
            volume: self.volume,
            power_gain: self.power_gain,
            full_scale: self.full_scale,
            sample_rate,
        };
        cfg.validate()
            .with_context(|| "invalid chain configuration")?;
        Ok(cfg)
    }
}

/// Simulated channel parameters, mirroring the link defaults.
#[derive(Args, Clone, Copy)]
struct LinkFlags {
    /// Per-packet loss probability in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    /// Maximum delivery jitter in seconds.
    #[arg(long, default_value_t = 0.020)]
    jitter: f64,
    /// Air bitrate in bits per second.
    #[arg(long, default_value_t = 250_000.0)]
    bitrate: f64,
    /// Per-frame MAC/PHY overhead in bytes.
    #[arg(long, default_value_t = 25)]
    overhead: usize,
    /// Channel RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl LinkFlags {
    fn to_params(self) -> LinkParams {
        LinkParams {
            bitrate: self.bitrate,
            loss_prob: self.loss,
            jitter_max: self.jitter,
            overhead_bytes: self.overhead,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConcealmentFlag {
    /// Fill gaps with analog silence (code 2048).
    Zero,
    /// Repeat the previous packet's codes.
    Repeat,
}

impl From<ConcealmentFlag> for Concealment {
    fn from(value: ConcealmentFlag) -> Self {
        match value {
            ConcealmentFlag::Zero => Concealment::ZeroFill,
            ConcealmentFlag::Repeat => Concealment::RepeatLast,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKindFlag {
    /// S1/S2 tone bursts in rhythm.
    Heart,
    /// Heart plus late-systolic band noise.
    Murmur,
    /// Band noise with components up to 900 Hz.
    Lung,
}

impl From<SynthKindFlag> for SynthKind {
    fn from(value: SynthKindFlag) -> Self {
        match value {
            SynthKindFlag::Heart => SynthKind::Heart,
            SynthKindFlag::Murmur => SynthKind::Murmur,
            SynthKindFlag::Lung => SynthKind::Lung,
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Process {
            input,
            output,
            chain,
        } => cmd_process(&input, &output, chain),
        Command::Simulate {
            input,
            output,
            chain,
            link,
            depth,
            concealment,
        } => cmd_simulate(&input, &output, chain, link, depth, concealment.into()),
        Command::Analyze { input, full_scale } => cmd_analyze(&input, full_scale),
        Command::Serve {
            input,
            bind,
            control_bind,
            fast,
            wait_listeners,
            chain,
        } => cmd_serve(&input, &bind, &control_bind, fast, wait_listeners, chain),
        Command::Listen {
            connect,
            record,
            rate,
            full_scale,
        } => cmd_listen(&connect, record.as_deref(), rate, full_scale),
        Command::Control { connect, command } => cmd_control(&connect, &command.join(" ")),
        Command::Synth {
            kind,
            output,
            bpm,
            duration,
            rate,
            seed,
            full_scale,
        } => cmd_synth(kind.into(), &output, bpm, duration, rate, seed, full_scale),
    }
}

fn load_input(path: &std::path::Path, full_scale: f64) -> Result<AudioBuffer> {
    let buf = read_wav(path, full_scale)
        .with_context(|| format!("cannot read {}", path.display()))?;
    if buf.is_empty() {
        bail!("{}: input holds no samples", path.display());
    }
    Ok(buf)
}

fn cmd_process(input: &std::path::Path, output: &std::path::Path, chain: ChainFlags) -> Result<()> {
    let buf = load_input(input, chain.full_scale)?;
    let cfg = chain.to_config(buf.sample_rate())?;

    // Stage by stage, so each gain can be reported.
    let rate = cfg.sample_rate as f64;
    let mut dc = design_dc_blocker(DC_BLOCK_CUTOFF_HZ, rate)?;
    let mut lp = design_lowpass(cfg.cutoff.hz(), cfg.filter_gain, rate)?;
    let blocked = filter_apply(&buf, &mut dc)?;
    let pre = preamplify(&blocked, cfg.preamp_gain)?;
    let filtered = filter_apply(&pre, &mut lp)?;
    let amped = power_amplify(&filtered, cfg.volume, cfg.power_gain, cfg.full_scale)?;
    let block = quantize_adc(&amped, cfg.full_scale)?;
    let out = dequantize_dac(&block, cfg.full_scale)?;
    write_wav(output, &out, cfg.full_scale)
        .with_context(|| format!("cannot write {}", output.display()))?;

    println!("stage            gain                 output rms (V)");
    println!("input            -                    {:.6}", buf.rms());
    println!("dc block 10 Hz   1.00 passband        {:.6}", blocked.rms());
    println!("preamp           {:<20.2} {:.6}", cfg.preamp_gain, pre.rms());
    println!(
        "low-pass {:>4} Hz {:<20.2} {:.6}",
        cfg.cutoff.hz_u32(),
        cfg.filter_gain,
        filtered.rms()
    );
    println!(
        "power amp        {:.2} (vol {:.2} x {:.2})  {:.6}",
        cfg.volume * cfg.power_gain,
        cfg.volume,
        cfg.power_gain,
        amped.rms()
    );
    println!(
        "adc/dac 12-bit   full scale {:.2} V     {:.6}",
        cfg.full_scale,
        out.rms()
    );
    println!("total nominal    {:.2}", cfg.nominal_gain());
    println!("{} samples -> {}", out.len(), output.display());
    Ok(())
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

fn cmd_simulate(
    input: &std::path::Path,
    output: &std::path::Path,
    chain: ChainFlags,
    link: LinkFlags,
    depth: f64,
    concealment: Concealment,
) -> Result<()> {
    let buf = load_input(input, chain.full_scale)?;
    let cfg = chain.to_config(buf.sample_rate())?;
    let params = link.to_params();

    let block = stetho_core::dsp::run_transmit_chain(&buf, &cfg)?;
    let packet_flags = match cfg.cutoff {
        Cutoff::Hz100 => 0,
        Cutoff::Hz1000 => flags::CUTOFF_1000,
    };
    let outbound = schedule_packets(packetize(&block, 0, packet_flags), cfg.sample_rate);
    let run = link_transmit(&outbound, &params)?;
    let (blocks, jitter_stats) = reassemble(&run.deliveries, cfg.sample_rate, depth, concealment)?;

    let codes = concat_blocks(&blocks);
    let start = blocks.first().map(|b| b.start_timestamp()).unwrap_or(0);
    let received = SampleBlock::new(codes, start, cfg.sample_rate)?;
    let out = dequantize_dac(&received, cfg.full_scale)?;
    write_wav(output, &out, cfg.full_scale)
        .with_context(|| format!("cannot write {}", output.display()))?;

    let mut latencies: Vec<f64> = run
        .deliveries
        .iter()
        .filter(|d| !d.dropped)
        .map(|d| (d.arrival_time - d.send_time) * 1000.0)
        .collect();
    latencies.sort_by(|a, b| a.total_cmp(b));

    println!("packets sent           {}", run.stats.sent);
    println!("delivered (played)     {}", jitter_stats.accepted);
    println!("dropped by link        {}", run.stats.dropped);
    println!("late discarded         {}", jitter_stats.late_discarded);
    println!("concealed samples      {}", jitter_stats.concealed_samples);
    println!("utilization            {:.3}", run.stats.utilization);
    println!(
        "latency ms p50/p90/p99 {:.1} / {:.1} / {:.1}",
        percentile(&latencies, 0.50),
        percentile(&latencies, 0.90),
        percentile(&latencies, 0.99)
    );
    println!("{} samples -> {}", out.len(), output.display());
    Ok(())
}

fn cmd_analyze(input: &std::path::Path, full_scale: f64) -> Result<()> {
    let buf = load_input(input, full_scale)?;
    let events = match detect_heart_sounds(&buf) {
        Ok(events) => events,
        Err(e @ AnalysisError::BufferTooShort { .. }) => bail!("{e}"),
        Err(e) => return Err(e.into()),
    };
    if events.is_empty() {
        println!("no events");
        return Ok(());
    }
    println!("time_s   label  s1_band_energy  s2_band_energy");
    for event in &events {
        println!(
            "{:<8.3} {:<6} {:<15.6e} {:<15.6e}",
            event.time, event.label, event.energy_s1_band, event.energy_s2_band
        );
    }
    let s1 = events.iter().filter(|e| e.label == HeartLabel::S1).count();
    match estimate_heart_rate(&events) {
        Ok(bpm) => println!("heart rate: {bpm:.1} bpm ({s1} S1 events)"),
        Err(AnalysisError::InsufficientS1Events { found }) => {
            println!("heart rate: unavailable (needs at least 2 S1 events, found {found})")
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

fn cmd_serve(
    input: &std::path::Path,
    bind: &str,
    control_bind: &str,
    fast: bool,
    wait_listeners: usize,
    chain: ChainFlags,
) -> Result<()> {
    let buf = load_input(input, chain.full_scale)?;
    let cfg = chain.to_config(buf.sample_rate())?;
    let server = StreamServer::bind(ServeConfig {
        stream_bind: bind.to_string(),
        control_bind: control_bind.to_string(),
        initial_config: cfg,
        ..ServeConfig::default()
    })
    .with_context(|| format!("cannot bind {bind} / {control_bind}"))?;
    println!("stream listening on {}", server.stream_addr());
    println!("control listening on {}", server.control_addr());
    std::io::stdout().flush().ok();

    while server.session_count() < wait_listeners {
        std::thread::sleep(Duration::from_millis(10));
    }

    let mut chain = TransmitChain::new(cfg)?;
    let mut generation = server.control_state().generation;
    let mut seq: u16 = 0;
    // Fast mode still paces the broadcast; a completely unpaced burst
    // would outrun the per-listener writer threads and trip the
    // slow-listener cutoff on healthy subscribers.
    let speedup = if fast { 24.0 } else { 1.0 };
    let rate = cfg.sample_rate as f64 * speedup;
    let started = Instant::now();

    for chunk in buf.samples().chunks(48) {
        // Commands land between blocks; a cutoff change resets the filter
        // and flips the packet flag from this block on.
        let state = server.control_state();
        if state.generation != generation {
            generation = state.generation;
            chain.set_config(ChainConfig {
                sample_rate: cfg.sample_rate,
                full_scale: cfg.full_scale,
                ..state.config
            })?;
        }
        let block_start = chain.next_timestamp();
        let due = Duration::from_secs_f64(block_start as f64 / rate);
        let elapsed = started.elapsed();
        if due > elapsed {
            std::thread::sleep(due - elapsed);
        }
        let audio = AudioBuffer::new(cfg.sample_rate, chunk.to_vec())?;
        let block = chain.process(&audio)?;
        let packet_flags = match chain.config().cutoff {
            Cutoff::Hz100 => 0,
            Cutoff::Hz1000 => flags::CUTOFF_1000,
        };
        for packet in packetize(&block, seq, packet_flags) {
            server.publish_packet(&packet)?;
            seq = seq.wrapping_add(1);
        }
    }
    server.shutdown();
    println!("stream complete ({seq} packets)");
    Ok(())
}

/// Orders received codes by timestamp (filling any gaps with silence) and
/// writes them out as a WAV on close.
struct RecordSink {
    codes: Vec<u16>,
    next_ts: Option<u64>,
    packets: u64,
}

impl RecordSink {
    fn new() -> Self {
        Self {
            codes: Vec::new(),
            next_ts: None,
            packets: 0,
        }
    }
}

impl PacketSink for RecordSink {
    fn on_packet(&mut self, packet: Packet) -> Result<(), ServiceError> {
        self.packets += 1;
        let ts = match self.next_ts {
            None => {
                self.next_ts = Some(packet.timestamp as u64);
                packet.timestamp as u64
            }
            Some(expected) => {
                let delta = packet.timestamp.wrapping_sub(expected as u32) as i32 as i64;
                (expected as i64 + delta).max(0) as u64
            }
        };
        let expected = self.next_ts.unwrap();
        if ts > expected {
            self.codes
                .extend(std::iter::repeat_n(stetho_core::dsp::MIDPOINT_CODE, (ts - expected) as usize));
        }
        if ts >= expected {
            self.codes.extend_from_slice(&packet.codes);
            self.next_ts = Some(ts + packet.codes.len() as u64);
        }
        Ok(())
    }
}

fn cmd_listen(
    connect: &str,
    record: Option<&std::path::Path>,
    rate: u32,
    full_scale: f64,
) -> Result<()> {
    let mut sink = RecordSink::new();
    let stats = listen_client(connect, &mut sink)
        .with_context(|| format!("cannot stream from {connect}"))?;
    println!(
        "stream ended: {} packets, {} bytes, {} samples",
        stats.packets,
        stats.bytes,
        sink.codes.len()
    );
    if let Some(path) = record {
        let block = SampleBlock::new(sink.codes, 0, rate)?;
        let audio = dequantize_dac(&block, full_scale)?;
        write_wav(path, &audio, full_scale)
            .with_context(|| format!("cannot write {}", path.display()))?;
        println!("recorded {} samples -> {}", audio.len(), path.display());
    }
    Ok(())
}

fn cmd_control(connect: &str, line: &str) -> Result<()> {
    let mut stream =
        TcpStream::connect(connect).with_context(|| format!("cannot reach {connect}"))?;
    stream.write_all(line.as_bytes())?;
    stream.write_all(b"\n")?;
    let mut reader = BufReader::new(stream);
    let mut reply = String::new();
    reader.read_line(&mut reply)?;
    let reply = reply.trim_end();
    println!("{reply}");
    if reply.starts_with("OK") || reply.starts_with("STATUS") {
        Ok(())
    } else {
        bail!("command rejected");
    }
}

fn cmd_synth(
    kind: SynthKind,
    output: &std::path::Path,
    bpm: f64,
    duration: f64,
    rate: u32,
    seed: u64,
    full_scale: f64,
) -> Result<()> {
    let buf = synthesize(&SynthParams {
        kind,
        duration_secs: duration,
        bpm,
        sample_rate: rate,
        seed,
    })?;
    write_wav(output, &buf, full_scale)
        .with_context(|| format!("cannot write {}", output.display()))?;
    println!(
        "{} samples at {} Hz -> {}",
        buf.len(),
        rate,
        output.display()
    );
    Ok(())
}
