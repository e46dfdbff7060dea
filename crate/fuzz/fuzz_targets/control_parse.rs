#![no_main]

use libfuzzer_sys::fuzz_target;
use stetho_core::dsp::ChainConfig;
use stetho_core::service::{apply_control, ControlCommand};

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    // Parsing and applying arbitrary command lines must never panic, and
    // whatever gets through must leave the config valid.
    if let Ok(cmd) = ControlCommand::parse(line) {
        if let Ok(updated) = apply_control(cmd, &ChainConfig::default()) {
            updated.validate().expect("applied config must stay valid");
        }
    }
});
