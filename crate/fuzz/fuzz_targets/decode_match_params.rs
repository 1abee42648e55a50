#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::matcher::{decode_match_params, MatchManifest};

fuzz_target!(|data: &[u8]| {
    let Some((&dim, payload)) = data.split_first() else { return };
    let manifest = MatchManifest::untrained(usize::from(dim % 8) + 1);
    if let Ok((params, _)) = decode_match_params(&manifest, payload) {
        assert_eq!(params.dim(), manifest.dim);
    }
});
