#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(clip) = bsk::dataset::parse_wav(data) {
        assert!(clip.sample_rate() > 0);
    }
});
