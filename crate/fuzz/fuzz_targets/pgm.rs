#![no_main]

use libfuzzer_sys::fuzz_target;
use owseg::tensor_io::{decode_mask, decode_pgm, encode_mask, encode_pgm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pgm(data) {
        assert_eq!(decode_pgm(&encode_pgm(&img)).expect("round trip"), img);
    }
    if let Ok(mask) = decode_mask(data) {
        let bytes = encode_mask(&mask).expect("mask re-encodes");
        assert_eq!(decode_mask(&bytes).expect("round trip"), mask);
    }
});
