#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(events) = bsk::dataset::parse_annotations_str(text) {
            assert!(events.iter().all(|e| e.onset <= e.offset));
        }
    }
});
