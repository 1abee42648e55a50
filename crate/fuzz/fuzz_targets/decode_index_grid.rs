#![no_main]
use libfuzzer_sys::fuzz_target;
use regforge::projection::{decode_index_grid, IndexHeader, MapKind};

// The first two bytes pick the grid shape, the rest is the payload.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let header = IndexHeader {
        height: usize::from(data[0] % 16) + 1,
        width: usize::from(data[1]) + 1,
        kind: MapKind::Reflectance,
    };
    if let Ok(grid) = decode_index_grid(header, &data[2..]) {
        assert_eq!(grid.index.len(), header.height * header.width);
    }
});
