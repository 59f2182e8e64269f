#![no_main]

use libfuzzer_sys::fuzz_target;
use owseg::pipeline::parse_name_similarity;

fuzz_target!(|data: &[u8]| {
    if let Ok(ns) = parse_name_similarity(data) {
        let m = ns.matrix(&ns.rows, &ns.cols).expect("own names resolve");
        assert_eq!(m, ns.similarity);
    }
});
