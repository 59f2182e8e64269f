#![no_main]

use libfuzzer_sys::fuzz_target;
use owseg::pipeline::parse_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = parse_config(data) {
        let _ = cfg.check();
        let _ = cfg.unknown_mask_config();
    }
});
