//! Packetization, the simulated radio link, and receive-side reassembly.

mod jitter;
mod link;
mod packet;

pub use jitter::{concat_blocks, reassemble, Concealment, JitterBuffer, JitterStats};
pub use link::{
    link_transmit, schedule_packets, DeliveredPacket, LinkParams, LinkRun, LinkStats,
};
pub use packet::{
    decode_packet, encode_packet, flags, packetize, DecodeError, EncodeError, Packet, HEADER_LEN,
    MAX_CODES_PER_PACKET, MAX_ENCODED_LEN, WIRE_VERSION,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("bitrate must be positive, got {0}")]
    InvalidBitrate(f64),
    #[error("loss probability must lie in [0, 1), got {0}")]
    InvalidLossProbability(f64),
    #[error("jitter bound must be non-negative, got {0}")]
    InvalidJitter(f64),
    #[error("jitter buffer depth must be positive, got {0}")]
    InvalidDepth(f64),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("send times must be nondecreasing")]
    UnorderedSendTimes,
}
