#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = outpaint::layout_data::parse_manifest(text) {
            for r in &records {
                let _ = r.source_id();
            }
        }
    }
});
