#![no_main]

use libfuzzer_sys::fuzz_target;
use ruva::config::ServiceConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ServiceConfig::from_toml(text);
    }
});
