#![no_main]

use libfuzzer_sys::fuzz_target;
use std::io::Cursor;
use stetho_core::service::read_frame;
use stetho_core::transport::decode_packet;

fuzz_target!(|data: &[u8]| {
    // Walk the byte stream the way a listener does: frame by frame until
    // clean EOF or the first protocol error. Neither layer may panic.
    let mut cursor = Cursor::new(data);
    loop {
        match read_frame(&mut cursor) {
            Ok(Some(frame)) => {
                let _ = decode_packet(&frame);
            }
            Ok(None) | Err(_) => break,
        }
    }
});
