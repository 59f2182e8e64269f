//! Binary PGM (P5) with 8-bit samples. Used for unknown masks (0/255) and
//! label-index maps.

use std::fs;
use std::path::Path;

use super::{BinaryMask, TensorIoError};

pub const MASK_ON: u8 = 255;
pub const MASK_OFF: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u8,
    pub pixels: Vec<u8>,
}

fn parse_err(offset: usize, reason: impl Into<String>) -> TensorIoError {
    TensorIoError::Parse {
        location: format!("byte {offset}"),
        reason: reason.into(),
    }
}

struct HeaderCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.buf.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.buf.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize, TensorIoError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.buf.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {field}")));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| parse_err(start, format!("{field} out of range")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, TensorIoError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_err(0, "missing P5 magic"));
    }
    let mut cur = HeaderCursor { buf: bytes, pos: 2 };
    if !cur.buf.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(parse_err(2, "expected whitespace after magic"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(parse_err(cur.pos, "width and height must be at least 1"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(cur.pos, format!("unsupported maxval {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(parse_err(cur.pos, "expected single whitespace before raster")),
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| parse_err(cur.pos, "width*height overflows"))?;
    let available = bytes.len() - cur.pos;
    if available < count {
        return Err(TensorIoError::Truncated {
            field: "raster",
            offset: cur.pos,
            expected: count,
            available,
        });
    }
    if available > count {
        return Err(TensorIoError::TrailingBytes {
            offset: cur.pos + count,
            extra: available - count,
        });
    }
    let pixels = bytes[cur.pos..].to_vec();
    let maxval = maxval as u8;
    if let Some(i) = pixels.iter().position(|&p| p > maxval) {
        return Err(parse_err(
            cur.pos + i,
            format!("sample {} exceeds maxval {maxval}", pixels[i]),
        ));
    }
    Ok(GrayImage {
        width,
        height,
        maxval,
        pixels,
    })
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask, TensorIoError> {
    let img = decode_pgm(bytes)?;
    let raster_start = bytes.len() - img.pixels.len();
    let bits = img
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| match p {
            MASK_ON => Ok(true),
            MASK_OFF => Ok(false),
            value => Err(TensorIoError::NonBinaryPixel {
                offset: raster_start + i,
                value,
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BinaryMask {
        height: img.height,
        width: img.width,
        bits,
    })
}

pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>, TensorIoError> {
    if mask.bits.len() != mask.height * mask.width || mask.height == 0 || mask.width == 0 {
        return Err(TensorIoError::DimensionMismatch {
            what: "mask bits".into(),
            expected: mask.height * mask.width,
            found: mask.bits.len(),
        });
    }
    Ok(encode_pgm(&GrayImage {
        width: mask.width,
        height: mask.height,
        maxval: 255,
        pixels: mask.bits.iter().map(|&b| if b { MASK_ON } else { MASK_OFF }).collect(),
    }))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask, TensorIoError> {
    decode_mask(&fs::read(path)?)
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), TensorIoError> {
    fs::write(path, encode_mask(mask)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mask_with_single_positive_round_trips() {
        let mut bits = vec![false; 9];
        bits[4] = true;
        let mask = BinaryMask::new(3, 3, bits).unwrap();
        let bytes = encode_mask(&mask).unwrap();
        assert!(bytes.starts_with(b"P5\n3 3\n255\n"));
        assert_eq!(decode_mask(&bytes).unwrap(), mask);
    }

    #[test]
    fn non_binary_pixel() {
        let mut bytes = b"P5\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128]);
        assert!(matches!(
            decode_mask(&bytes),
            Err(TensorIoError::NonBinaryPixel { value: 128, offset: 12 })
        ));
    }

    #[test]
    fn all_zero_mask() {
        let mut bytes = b"P5 4 2 255\n".to_vec();
        bytes.extend_from_slice(&[0; 8]);
        let mask = decode_mask(&bytes).unwrap();
        assert_eq!((mask.height, mask.width), (2, 4));
        assert!(mask.bits.iter().all(|b| !b));
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n1 1\n# max\n255\n".to_vec();
        bytes.push(255);
        assert!(decode_mask(&bytes).unwrap().bits[0]);
    }

    #[test]
    fn structural_errors() {
        assert!(decode_pgm(b"P6\n1 1\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(matches!(
            decode_pgm(b"P5\n2 2\n255\n\x00"),
            Err(TensorIoError::Truncated { .. })
        ));
        assert!(matches!(
            decode_pgm(b"P5\n1 1\n255\n\x00\x00"),
            Err(TensorIoError::TrailingBytes { .. })
        ));
        assert!(decode_pgm(b"P5\n0 1\n255\n").is_err());
        assert!(decode_pgm(b"P5\n99999999999999999999999 1\n255\n").is_err());
    }

    proptest! {
        #[test]
        fn mask_round_trip(h in 1usize..8, w in 1usize..8, seed in any::<u64>()) {
            let bits = (0..h * w).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let mask = BinaryMask::new(h, w, bits).unwrap();
            prop_assert_eq!(decode_mask(&encode_mask(&mask).unwrap()).unwrap(), mask);
        }
    }
}
