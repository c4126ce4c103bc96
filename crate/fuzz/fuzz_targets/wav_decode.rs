#![no_main]

use libfuzzer_sys::fuzz_target;
use storm_core::signal::wav::decode_wav;
use storm_core::signal::SAMPLE_RATE;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = decode_wav(data, SAMPLE_RATE) {
        assert!(w.samples().iter().all(|s| s.is_finite()));
    }
});
