#![no_main]

use libfuzzer_sys::fuzz_target;
use stetho_core::wav::decode_wav;

fuzz_target!(|data: &[u8]| {
    // The parser must never panic; accepted files always yield a
    // well-formed buffer.
    if let Ok(audio) = decode_wav(data, 2.5) {
        assert!(audio.sample_rate() > 0);
        assert!(audio.samples().iter().all(|s| s.is_finite()));
    }
});
