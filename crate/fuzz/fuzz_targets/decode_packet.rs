#![no_main]

use libfuzzer_sys::fuzz_target;
use stetho_core::transport::{decode_packet, encode_packet};

fuzz_target!(|data: &[u8]| {
    // The decoder must never panic, and the codec is bijective on valid
    // wire strings: anything that decodes re-encodes to the same bytes.
    if let Ok(packet) = decode_packet(data) {
        let bytes = encode_packet(&packet).expect("decoded packet must re-encode");
        assert_eq!(bytes, data);
    }
});
