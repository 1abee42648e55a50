#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::image_ops::parse_edge_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(edges) = parse_edge_csv(text) {
        assert!(edges.real_count() >= 1 && edges.real_count() <= edges.len());
        assert_eq!(parse_edge_csv(&edges.to_csv()).unwrap(), edges);
    }
});
