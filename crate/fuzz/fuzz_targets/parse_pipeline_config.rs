#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = PipelineConfig::from_json(text) {
        assert!(cfg.validate().is_ok());
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
});
