//! Binary netpbm: `P5` (gray) and `P6` (RGB), maxval 255.
//!
//! Header tokens are separated by whitespace; `#` comments run to the end of
//! the line. Exactly one whitespace byte separates the maxval from the
//! payload. Samples map to `[0, 1]` as `v / 255`; writing rounds
//! `v * 255` to the nearest integer and clamps to `[0, 255]`.

use std::fs;
use std::path::Path;

use msdr_core::image::Image;
use msdr_core::metrics::quantize_8bit;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PnmError {
    #[error("byte 0: expected magic \"P5\" or \"P6\", found {found:?}")]
    BadMagic { found: String },
    #[error("byte {offset}: {what}")]
    BadHeader { offset: usize, what: String },
    #[error("byte {offset}: maxval {found} is not supported (only 255)")]
    UnsupportedMaxval { offset: usize, found: u64 },
    #[error("byte {offset}: payload truncated, need {needed} bytes but only {available} remain")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("cannot write a {0}-channel image as netpbm")]
    Channels(usize),
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, name: &str) -> Result<u64, PnmError> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            let what = match self.bytes.get(start) {
                None => format!("header ends before the {name}"),
                Some(b) => format!("expected the {name} as a decimal number, found {:?}", *b as char),
            };
            return Err(PnmError::BadHeader { offset: start, what });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| PnmError::BadHeader {
                offset: start,
                what: format!("{name} is too large"),
            })
    }
}

/// Decodes a `P5` or `P6` file into a planar image.
pub fn decode(bytes: &[u8]) -> Result<Image, PnmError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        other => {
            return Err(PnmError::BadMagic {
                found: String::from_utf8_lossy(other.unwrap_or(bytes)).into_owned(),
            })
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = {
        h.skip_space();
        h.pos
    };
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval {
            offset: maxval_at,
            found: maxval,
        });
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => {
            return Err(PnmError::BadHeader {
                offset: h.pos,
                what: "expected one whitespace byte after the maxval".into(),
            })
        }
    }
    if width == 0 || height == 0 {
        return Err(PnmError::BadHeader {
            offset: 2,
            what: format!("image size {width}x{height} is empty"),
        });
    }
    let (w, ht) = (width as usize, height as usize);
    let needed = w
        .checked_mul(ht)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| PnmError::BadHeader {
            offset: 2,
            what: format!("image size {width}x{height} overflows"),
        })?;
    let payload = &bytes[h.pos..];
    if payload.len() < needed {
        return Err(PnmError::Truncated {
            offset: h.pos + payload.len(),
            needed,
            available: payload.len(),
        });
    }
    // Interleaved RGB on disk, planar in memory.
    let plane = w * ht;
    let mut pixels = vec![0.0; needed];
    for (i, &v) in payload[..needed].iter().enumerate() {
        let (p, c) = (i / channels, i % channels);
        pixels[c * plane + p] = f64::from(v) / 255.0;
    }
    Ok(Image::new(channels, ht, w, pixels).expect("dimensions checked above"))
}

/// Encodes a 1- or 3-channel image as `P5`/`P6`.
pub fn encode(image: &Image) -> Result<Vec<u8>, PnmError> {
    let c = image.channels();
    let magic = match c {
        1 => "P5",
        3 => "P6",
        other => return Err(PnmError::Channels(other)),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    let plane = image.width() * image.height();
    let px = image.pixels();
    out.reserve(plane * c);
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize_8bit(px[ch * plane + p]) as u8);
        }
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum PnmFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: String,
        #[source]
        source: PnmError,
    },
}

pub fn read_file(path: &Path) -> Result<Image, PnmFileError> {
    let bytes = fs::read(path).map_err(|source| PnmFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes).map_err(|source| PnmFileError::Format {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_file(path: &Path, image: &Image) -> Result<(), PnmFileError> {
    let bytes = encode(image).map_err(|source| PnmFileError::Format {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, bytes).map_err(|source| PnmFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_example() {
        let img = decode(b"P5\n2 2\n255\n\x00\x80\xff\x40").unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (1, 2, 2));
        let expect = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0];
        for (a, b) in img.pixels().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((img.pixels()[1] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn comments_and_spacing() {
        let img = decode(b"P5 # a comment\n 3\t1 # more\n255 abc").unwrap();
        assert_eq!(img.width(), 3);
        assert_eq!(img.pixels()[0], f64::from(b'a') / 255.0);
    }

    #[test]
    fn color_is_deinterleaved() {
        let img = decode(b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06").unwrap();
        let got: Vec<u8> = img.pixels().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(got, [1, 4, 2, 5, 3, 6]);
        assert_eq!(&encode(&img).unwrap()[11..], b"\x01\x02\x03\x04\x05\x06");
    }

    #[test]
    fn errors_carry_offsets() {
        assert!(matches!(decode(b"P3\n1 1\n255\n0"), Err(PnmError::BadMagic { .. })));
        assert!(matches!(decode(b""), Err(PnmError::BadMagic { .. })));
        assert_eq!(
            decode(b"P5\n1 1\n65535\n\x00\x00"),
            Err(PnmError::UnsupportedMaxval {
                offset: 7,
                found: 65535
            })
        );
        assert_eq!(
            decode(b"P6\n2 1\n255\n\x01\x02\x03\x04\x05"),
            Err(PnmError::Truncated {
                offset: 16,
                needed: 6,
                available: 5
            })
        );
        let err = decode(b"P5\nx 1\n255\n").unwrap_err();
        assert!(matches!(err, PnmError::BadHeader { offset: 3, .. }), "{err:?}");
        assert!(decode(b"P5\n1 1\n255").is_err());
        assert!(decode(b"P5\n0 1\n255\n").is_err());
    }

    #[test]
    fn roundtrip_within_half_step() {
        let pixels: Vec<f64> = (0..60).map(|i| (f64::from(i) * 0.377).fract()).collect();
        let img = Image::new(3, 4, 5, pixels).unwrap();
        let back = decode(&encode(&img).unwrap()).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }
}
