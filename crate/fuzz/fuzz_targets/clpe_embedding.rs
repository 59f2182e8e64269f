#![no_main]

use libfuzzer_sys::fuzz_target;
use owseg::tensor_io::{decode_embedding_map, encode_embedding_map};

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = decode_embedding_map(data) {
        let bytes = encode_embedding_map(&map).expect("decoded map re-encodes");
        assert_eq!(decode_embedding_map(&bytes).expect("round trip"), map);
    }
});
