#![no_main]

use libfuzzer_sys::fuzz_target;
use ruva_core::extract::loader::parse_json_record;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_json_record(text);
    }
});
