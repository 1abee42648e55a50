#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::pose::parse_pose;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pose) = parse_pose(text) {
        let again = parse_pose(&pose.to_json()).unwrap();
        assert_eq!(again.inliers, pose.inliers);
        assert!(again.transform.rotation_angle_to(&pose.transform) < 1e-9);
    }
});
