#![no_main]

use libfuzzer_sys::fuzz_target;
use owseg::pipeline::{check_image_id, parse_manifest};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_manifest(data) {
        for r in records {
            assert!(check_image_id(&r.image_id).is_ok());
        }
    }
});
