#![no_main]

use libfuzzer_sys::fuzz_target;
use owseg::tensor_io::{decode_scalar_map, encode_scalar_map};

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = decode_scalar_map(data) {
        let bytes = encode_scalar_map(&map).expect("decoded map re-encodes");
        assert_eq!(decode_scalar_map(&bytes).expect("round trip"), map);
    }
});
