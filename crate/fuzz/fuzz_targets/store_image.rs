#![no_main]

use libfuzzer_sys::fuzz_target;
use ruva_core::portable::{export_bytes, import_portable};
use ruva_core::store::Store;

fuzz_target!(|data: &[u8]| {
    let Ok(store) = Store::from_image(data) else { return };
    // Whatever replays cleanly must also survive a portable round trip.
    let dump = export_bytes(&store);
    let mut copy = Store::in_memory(store.dimension());
    import_portable(&mut copy, dump.as_slice()).expect("re-import of a replayed image");
});
