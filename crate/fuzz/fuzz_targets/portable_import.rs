#![no_main]

use libfuzzer_sys::fuzz_target;
use ruva_core::portable::{export_bytes, import_portable};
use ruva_core::store::Store;

fuzz_target!(|data: &[u8]| {
    let mut store = Store::in_memory(4);
    if import_portable(&mut store, data).is_err() {
        return;
    }
    let first = export_bytes(&store);
    let mut again = Store::in_memory(store.dimension());
    import_portable(&mut again, first.as_slice()).expect("export re-imports");
    assert_eq!(export_bytes(&again), first);
});
