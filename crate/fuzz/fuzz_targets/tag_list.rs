#![no_main]

use libfuzzer_sys::fuzz_target;
use owseg::tagging::parse_tag_list;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        for tag in parse_tag_list(text) {
            assert!(!tag.is_empty());
            assert_eq!(tag.trim(), tag);
        }
    }
});
