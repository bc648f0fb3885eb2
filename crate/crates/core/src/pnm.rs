//! Binary PGM (16-bit depth) and PPM (RGB) reading and writing.

use thiserror::Error;

use crate::depthcodec::{ColorFrame, DepthFrame};

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("PNM parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(msg: impl Into<String>) -> PnmError {
    PnmError::Parse(msg.into())
}

struct Header {
    magic: [u8; 2],
    width: u32,
    height: u32,
    maxval: u32,
    data_start: usize,
}

fn read_header(bytes: &[u8]) -> Result<Header, PnmError> {
    if bytes.len() < 2 {
        return Err(parse_err("file too short for a PNM magic number"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(format!("expected a number at byte {start}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| parse_err(format!("number {text} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(parse_err("missing whitespace after header")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(parse_err(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(format!("maxval {maxval} out of range")));
    }
    Ok(Header { magic, width, height, maxval, data_start: pos })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8], PnmError> {
    let per_sample = if h.maxval > 255 { 2 } else { 1 };
    let need = (h.width as usize)
        .checked_mul(h.height as usize)
        .and_then(|n| n.checked_mul(channels * per_sample))
        .ok_or_else(|| parse_err("image dimensions overflow"))?;
    bytes
        .get(h.data_start..h.data_start + need)
        .ok_or_else(|| parse_err(format!("expected {need} bytes of pixel data, found {}", bytes.len() - h.data_start)))
}

/// Reads a binary PGM (`P5`). 16-bit samples are big-endian.
pub fn parse_pgm(bytes: &[u8]) -> Result<DepthFrame, PnmError> {
    let h = read_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(parse_err("not a binary PGM (expected P5)"));
    }
    let data = payload(bytes, &h, 1)?;
    let samples = if h.maxval > 255 {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data.iter().map(|&b| b as u16).collect()
    };
    Ok(DepthFrame { width: h.width, height: h.height, samples })
}

/// Reads a binary PPM (`P6`) with maxval 255.
pub fn parse_ppm(bytes: &[u8]) -> Result<ColorFrame, PnmError> {
    let h = read_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(parse_err("not a binary PPM (expected P6)"));
    }
    if h.maxval != 255 {
        return Err(parse_err(format!("unsupported PPM maxval {}", h.maxval)));
    }
    let data = payload(bytes, &h, 3)?;
    Ok(ColorFrame { width: h.width, height: h.height, pixels: data.to_vec() })
}

/// 16-bit PGM, maxval 65535.
pub fn pgm_bytes(d: &DepthFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", d.width, d.height).into_bytes();
    out.reserve(2 * d.samples.len());
    for s in &d.samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

pub fn ppm_bytes(c: &ColorFrame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", c.width, c.height).into_bytes();
    out.extend_from_slice(&c.pixels);
    out
}

pub fn read_pgm(path: &std::path::Path) -> Result<DepthFrame, PnmError> {
    parse_pgm(&std::fs::read(path)?)
}

pub fn read_ppm(path: &std::path::Path) -> Result<ColorFrame, PnmError> {
    parse_ppm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_big_endian() {
        let d = DepthFrame::new(3, 2, vec![0, 1, 256, 65535, 1000, 2]).unwrap();
        let bytes = pgm_bytes(&d);
        assert!(bytes.starts_with(b"P5\n3 2\n65535\n"));
        assert_eq!(&bytes[13..15], &[0, 0]);
        assert_eq!(&bytes[17..19], &[1, 0]);
        assert_eq!(parse_pgm(&bytes).unwrap(), d);
    }

    #[test]
    fn ppm_round_trip_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let c = parse_ppm(&bytes).unwrap();
        assert_eq!(c.pixels, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(parse_ppm(&ppm_bytes(&c)).unwrap(), c);
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_pgm(b"").is_err());
        assert!(parse_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n65535\n\0\0").is_err());
        assert!(parse_pgm(b"P5\nx 2\n255\n").is_err());
        assert!(parse_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
    }
}
