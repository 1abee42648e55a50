#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::projection::parse_index_header;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(h) = parse_index_header(text) {
            assert!(h.height > 0 && h.width > 0);
        }
    }
});
