#![no_main]

use libfuzzer_sys::fuzz_target;
use ruva_core::extract::parse_amount;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Some(a) = parse_amount(text) {
        assert!(a.value.is_finite());
    }
});
