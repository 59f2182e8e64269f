#![no_main]

use libfuzzer_sys::fuzz_target;
use owseg::tensor_io::{parse_vocabulary, vocabulary_to_json};

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = parse_vocabulary(data) {
        assert!(v.known_count() <= v.len());
        let json = vocabulary_to_json(&v);
        let _ = parse_vocabulary(&json).expect("round trip");
    }
});
