#![no_main]

use libfuzzer_sys::fuzz_target;
use ruva_core::model::Timestamp;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Some(t) = Timestamp::parse(text) {
        assert_eq!(Timestamp::parse(&t.to_string()), Some(t));
    }
});
