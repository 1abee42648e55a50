#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::data_io::parse_calib;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(calib) = parse_calib(text) {
        assert_eq!(parse_calib(&calib.to_text()).unwrap(), calib);
        let _ = calib.intrinsics();
        let _ = calib.cam_from_velo();
    }
});
