#![no_main]

use libfuzzer_sys::fuzz_target;
use ruva_core::extract::loader::image_record;

// Layout: caption, NUL, meta sidecar JSON.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (caption, meta) = match text.split_once('\0') {
        Some((c, m)) => (c, Some(m)),
        None => (text, None),
    };
    let _ = image_record(data, caption, meta);
});
