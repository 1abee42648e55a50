#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::descriptor::{decode_descriptor_set, Branch, DescriptorHeader};

fuzz_target!(|data: &[u8]| {
    let Some((&dim, payload)) = data.split_first() else { return };
    let dim = usize::from(dim % 64) + 1;
    let header = DescriptorHeader {
        n: payload.len() / (4 * dim),
        dim,
        source: Branch::Camera,
    };
    if let Ok(d) = decode_descriptor_set(header, payload) {
        for i in 0..d.len() {
            let norm: f64 = d.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }
});
