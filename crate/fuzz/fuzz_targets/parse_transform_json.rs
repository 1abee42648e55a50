#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::pipeline::{parse_transform_json, transform_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = parse_transform_json(text) {
        let again = parse_transform_json(&transform_json(&t)).unwrap();
        assert!(again.rotation_angle_to(&t) < 1e-9);
        assert!((again.translation() - t.translation()).norm() <= 1e-9 * (1.0 + t.translation().norm()));
    }
});
