#![no_main]

use libfuzzer_sys::fuzz_target;
use storm_core::manifest::{format_manifest, parse_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_manifest(text) {
        let again = format_manifest(&records).expect("parsed records are writable");
        assert_eq!(parse_manifest(&again).expect("formatted manifest parses"), records);
    }
});
