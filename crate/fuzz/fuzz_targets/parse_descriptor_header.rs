#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::descriptor::parse_descriptor_header;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(h) = parse_descriptor_header(text) {
            assert!(h.dim > 0);
        }
    }
});
