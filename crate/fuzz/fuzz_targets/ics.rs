#![no_main]

use libfuzzer_sys::fuzz_target;
use ruva_core::extract::loader::parse_ics;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_ics(text);
    }
});
