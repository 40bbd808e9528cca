#![no_main]

use libfuzzer_sys::fuzz_target;
use ruva_core::eval::GraphFact;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = GraphFact::parse(text);
    }
});
