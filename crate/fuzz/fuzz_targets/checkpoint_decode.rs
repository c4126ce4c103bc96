#![no_main]

use libfuzzer_sys::fuzz_target;
use storm_core::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::decode(data) {
        let bytes = c.encode().expect("decoded checkpoints re-encode");
        assert_eq!(bytes, data);
    }
});
