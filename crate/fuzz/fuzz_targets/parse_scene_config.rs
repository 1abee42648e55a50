#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::data_io::parse_scene_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_scene_config(text) {
            let _ = cfg.intrinsics();
        }
    }
});
