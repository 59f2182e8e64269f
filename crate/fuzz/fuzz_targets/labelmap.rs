#![no_main]

//! Input layout: u16 little-endian sidecar length, sidecar JSON, then PGM bytes.

use libfuzzer_sys::fuzz_target;
use owseg::openworld::decode_labelmap;
use owseg::tensor_io::{TextEmbedding, Vocabulary};

fuzz_target!(|data: &[u8]| {
    let Some((len, rest)) = data.split_first_chunk::<2>() else {
        return;
    };
    let len = usize::from(u16::from_le_bytes(*len)).min(rest.len());
    let (sidecar, pgm) = rest.split_at(len);
    let vocab = Vocabulary::new(
        vec![
            TextEmbedding::new("road", vec![1.0, 0.0]),
            TextEmbedding::new("sky", vec![0.0, 1.0]),
            TextEmbedding::new("cow", vec![1.0, 1.0]),
        ],
        2,
    )
    .unwrap();
    if let Ok(lm) = decode_labelmap(pgm, sidecar, &vocab) {
        assert!(lm.labels.iter().all(|&l| usize::from(l) < vocab.len()));
    }
});
