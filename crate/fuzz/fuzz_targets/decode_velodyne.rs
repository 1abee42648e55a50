#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::data_io::{decode_velodyne, encode_velodyne, scan_from_records, RingMode};

// Whole 16-byte records decode and re-encode to the same bytes.
fuzz_target!(|data: &[u8]| {
    if let Ok(records) = decode_velodyne(data) {
        assert_eq!(encode_velodyne(&records), data);
        let _ = scan_from_records(&records, RingMode::AzimuthWrap);
    }
});
