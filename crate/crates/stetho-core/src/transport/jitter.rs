//! Receive-side jitter buffer with loss concealment.
//!
//! Packets are held until `depth` seconds after the first accepted packet's
//! arrival (the playout origin), then released in timestamp order on a fixed
//! playout clock. A packet arriving after its own release deadline is
//! discarded and counted; the hole it leaves is filled per the concealment
//! policy when the next present packet is released, so the output sample
//! count always matches the transmitted count between received packets.

use super::link::DeliveredPacket;
use super::packet::Packet;
use super::TransportError;
use crate::dsp::{SampleBlock, MIDPOINT_CODE};
use std::collections::BTreeMap;

/// How to fill samples lost in transit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concealment {
    /// Emit the analog-silence code 2048.
    ZeroFill,
    /// Re-emit the previous packet's codes, cycled or truncated to fit.
    RepeatLast,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JitterStats {
    /// Packets pushed into the buffer.
    pub received: usize,
    /// Packets released into the output stream.
    pub accepted: usize,
    /// Packets that missed their release deadline (or re-arrived after
    /// their slot was concealed) and were discarded.
    pub late_discarded: usize,
    /// Packets whose timestamp was already buffered.
    pub duplicates: usize,
    /// Samples synthesized by the concealment policy.
    pub concealed_samples: u64,
}

#[derive(Debug)]
pub struct JitterBuffer {
    sample_rate: u32,
    depth: f64,
    concealment: Concealment,
    /// Pending packets keyed by unwrapped timestamp.
    pending: BTreeMap<u64, Vec<u16>>,
    /// Playout origin: (first accepted timestamp, its release time).
    origin: Option<(u64, f64)>,
    /// Next timestamp owed to the output stream.
    next_ts: u64,
    /// Highest unwrapped timestamp seen, reference for unwrapping.
    ref_ts: u64,
    last_codes: Vec<u16>,
    stats: JitterStats,
}

impl JitterBuffer {
    pub fn new(
        sample_rate: u32,
        depth: f64,
        concealment: Concealment,
    ) -> Result<Self, TransportError> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(TransportError::InvalidDepth(depth));
        }
        if sample_rate == 0 {
            return Err(TransportError::ZeroSampleRate);
        }
        Ok(Self {
            sample_rate,
            depth,
            concealment,
            pending: BTreeMap::new(),
            origin: None,
            next_ts: 0,
            ref_ts: 0,
            last_codes: Vec::new(),
            stats: JitterStats::default(),
        })
    }

    pub fn stats(&self) -> &JitterStats {
        &self.stats
    }

    /// Extends a wrapping 32-bit timestamp to the monotonic sample index
    /// closest to the stream position seen so far.
    fn unwrap_ts(&self, ts: u32) -> u64 {
        match self.origin {
            None => ts as u64,
            Some(_) => {
                let delta = ts.wrapping_sub(self.ref_ts as u32) as i32 as i64;
                (self.ref_ts as i64 + delta).max(0) as u64
            }
        }
    }

    fn deadline(&self, ts: u64) -> f64 {
        let (ts0, release0) = self.origin.expect("deadline before origin");
        release0 + (ts as i64 - ts0 as i64) as f64 / self.sample_rate as f64
    }

    /// Offers one received packet to the buffer.
    pub fn push(&mut self, packet: &Packet, arrival_time: f64) {
        self.stats.received += 1;
        let ts = self.unwrap_ts(packet.timestamp);
        if self.origin.is_none() {
            self.origin = Some((ts, arrival_time + self.depth));
            self.next_ts = ts;
        }
        self.ref_ts = self.ref_ts.max(ts);
        if ts < self.next_ts || arrival_time > self.deadline(ts) {
            self.stats.late_discarded += 1;
            return;
        }
        if self.pending.contains_key(&ts) {
            self.stats.duplicates += 1;
            return;
        }
        self.pending.insert(ts, packet.codes.clone());
    }

    fn conceal(&mut self, gap: u64) -> Vec<u16> {
        self.stats.concealed_samples += gap;
        match self.concealment {
            Concealment::ZeroFill => vec![MIDPOINT_CODE; gap as usize],
            Concealment::RepeatLast => {
                if self.last_codes.is_empty() {
                    vec![MIDPOINT_CODE; gap as usize]
                } else {
                    self.last_codes
                        .iter()
                        .cycle()
                        .take(gap as usize)
                        .copied()
                        .collect()
                }
            }
        }
    }

    fn release_first(&mut self) -> Vec<SampleBlock> {
        let (&ts, _) = self.pending.iter().next().expect("release on empty buffer");
        let codes = self.pending.remove(&ts).unwrap();
        let mut out = Vec::new();
        if ts > self.next_ts {
            let gap = ts - self.next_ts;
            let fill = self.conceal(gap);
            out.push(
                SampleBlock::new(fill, self.next_ts, self.sample_rate)
                    .expect("concealment codes are valid"),
            );
        }
        self.next_ts = ts + codes.len() as u64;
        self.stats.accepted += 1;
        self.last_codes = codes.clone();
        out.push(SampleBlock::new(codes, ts, self.sample_rate).expect("wire codes are valid"));
        out
    }

    /// Releases every packet whose playout deadline has passed by `now`,
    /// in timestamp order, concealing any gaps in front of them.
    pub fn poll(&mut self, now: f64) -> Vec<SampleBlock> {
        let mut out = Vec::new();
        while let Some((&ts, _)) = self.pending.iter().next() {
            if self.deadline(ts) > now {
                break;
            }
            out.extend(self.release_first());
        }
        out
    }

    /// Drains everything still pending at end of stream.
    pub fn flush(&mut self) -> Vec<SampleBlock> {
        let mut out = Vec::new();
        while !self.pending.is_empty() {
            out.extend(self.release_first());
        }
        out
    }
}

/// Offline reassembly of a recorded channel run: replays deliveries in
/// arrival order through a [`JitterBuffer`] and returns the released blocks.
pub fn reassemble(
    deliveries: &[DeliveredPacket],
    sample_rate: u32,
    depth: f64,
    concealment: Concealment,
) -> Result<(Vec<SampleBlock>, JitterStats), TransportError> {
    let mut arrivals: Vec<&DeliveredPacket> = deliveries.iter().filter(|d| !d.dropped).collect();
    arrivals.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time));

    let mut buffer = JitterBuffer::new(sample_rate, depth, concealment)?;
    let mut blocks = Vec::new();
    for d in arrivals {
        buffer.push(&d.packet, d.arrival_time);
        blocks.extend(buffer.poll(d.arrival_time));
    }
    blocks.extend(buffer.flush());
    let stats = buffer.stats().clone();
    Ok((blocks, stats))
}

/// Concatenates released blocks into one contiguous code stream.
pub fn concat_blocks(blocks: &[SampleBlock]) -> Vec<u16> {
    blocks.iter().flat_map(|b| b.codes().iter().copied()).collect()
}
