//! Four-quadrant composite frames and their `DSCF` wire form.
//!
//! Layout of the pixel plane, each cell `max_w × max_h` over the present
//! quadrants:
//!
//! ```text
//! +------------+------------+
//! | self color | self depth |
//! +------------+------------+
//! | env color  | env depth  |
//! +------------+------------+
//! ```
//!
//! A quadrant smaller than its cell sits at the cell's top-left corner; the
//! rest of the cell is black padding. All quadrants share the frame's single
//! `seq` and `timestamp_us`, which is what keeps the four streams in sync.

use thiserror::Error;

use crate::depthcodec::ColorFrame;
use crate::wire::{Reader, Writer};

pub const MAGIC: &[u8; 4] = b"DSCF";
pub const VERSION: u16 = 1;
/// Bytes before the payload: magic, version, seq, timestamp, 4 quadrant
/// records, payload length.
pub const HEADER_LEN: usize = 4 + 2 + 8 + 8 + 4 * QUADRANT_RECORD_LEN + 4;
const QUADRANT_RECORD_LEN: usize = 1 + 2 + 2 + 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositeError {
    #[error("composite needs at least one present quadrant")]
    AllAbsent,
    #[error("{quadrant:?} is {width}x{height}, larger than the {max_width}x{max_height} limit")]
    OversizeQuadrant { quadrant: Quadrant, width: u32, height: u32, max_width: u32, max_height: u32 },
    #[error("malformed composite layout: {0}")]
    MalformedLayout(String),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported composite version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated composite: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quadrant {
    SelfColor,
    SelfDepth,
    EnvColor,
    EnvDepth,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::SelfColor, Quadrant::SelfDepth, Quadrant::EnvColor, Quadrant::EnvDepth];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_depth(self) -> bool {
        matches!(self, Quadrant::SelfDepth | Quadrant::EnvDepth)
    }

    /// Cell column and row in the 2×2 grid.
    fn cell(self) -> (usize, usize) {
        match self {
            Quadrant::SelfColor => (0, 0),
            Quadrant::SelfDepth => (1, 0),
            Quadrant::EnvColor => (0, 1),
            Quadrant::EnvDepth => (1, 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quadrant::SelfColor => "self_color",
            Quadrant::SelfDepth => "self_depth",
            Quadrant::EnvColor => "env_color",
            Quadrant::EnvDepth => "env_depth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct QuadrantInfo {
    pub present: bool,
    pub width: u16,
    pub height: u16,
    /// Colorization parameter digest for depth quadrants, zero otherwise.
    pub params_digest: [u8; 8],
}

/// The four optional sub-frames, indexed by [`Quadrant`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuadrantFrames {
    pub self_color: Option<ColorFrame>,
    pub self_depth: Option<ColorFrame>,
    pub env_color: Option<ColorFrame>,
    pub env_depth: Option<ColorFrame>,
}

impl QuadrantFrames {
    pub fn get(&self, q: Quadrant) -> Option<&ColorFrame> {
        match q {
            Quadrant::SelfColor => self.self_color.as_ref(),
            Quadrant::SelfDepth => self.self_depth.as_ref(),
            Quadrant::EnvColor => self.env_color.as_ref(),
            Quadrant::EnvDepth => self.env_depth.as_ref(),
        }
    }

    pub fn slot(&mut self, q: Quadrant) -> &mut Option<ColorFrame> {
        match q {
            Quadrant::SelfColor => &mut self.self_color,
            Quadrant::SelfDepth => &mut self.self_depth,
            Quadrant::EnvColor => &mut self.env_color,
            Quadrant::EnvDepth => &mut self.env_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeFrame {
    pub seq: u64,
    pub timestamp_us: u64,
    pub quadrants: [QuadrantInfo; 4],
    /// RGB plane of `(2·cell_w) × (2·cell_h)` pixels.
    pub payload: Vec<u8>,
}

/// Quadrant frames plus the shared frame metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unpacked {
    pub seq: u64,
    pub timestamp_us: u64,
    pub quadrants: [QuadrantInfo; 4],
    pub frames: QuadrantFrames,
}

impl Unpacked {
    /// Capture time of a quadrant; identical for every quadrant by construction.
    pub fn timestamp_of(&self, q: Quadrant) -> Option<u64> {
        self.quadrants[q.index()].present.then_some(self.timestamp_us)
    }
}

fn cell_size(quadrants: &[QuadrantInfo; 4]) -> (usize, usize) {
    quadrants
        .iter()
        .filter(|q| q.present)
        .fold((0, 0), |(w, h), q| (w.max(q.width as usize), h.max(q.height as usize)))
}

impl CompositeFrame {
    /// Width and height of the whole pixel plane.
    pub fn plane_size(&self) -> (usize, usize) {
        let (w, h) = cell_size(&self.quadrants);
        (2 * w, 2 * h)
    }

    pub fn info(&self, q: Quadrant) -> &QuadrantInfo {
        &self.quadrants[q.index()]
    }

    fn validate_layout(&self) -> Result<(), CompositeError> {
        let malformed = |m: String| Err(CompositeError::MalformedLayout(m));
        if !self.quadrants.iter().any(|q| q.present) {
            return malformed("no quadrant is present".into());
        }
        for (q, info) in Quadrant::ALL.iter().zip(&self.quadrants) {
            if info.present && (info.width == 0 || info.height == 0) {
                return malformed(format!("{} present with empty size", q.name()));
            }
            if !info.present && (info.width != 0 || info.height != 0) {
                return malformed(format!("{} absent but sized {}x{}", q.name(), info.width, info.height));
            }
        }
        let (w, h) = self.plane_size();
        if self.payload.len() != 3 * w * h {
            return malformed(format!("payload is {} bytes, layout needs {}", self.payload.len(), 3 * w * h));
        }
        Ok(())
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len() + 4);
        out.extend_from_slice(MAGIC);
        out.put_u16(VERSION);
        out.put_u64(self.seq);
        out.put_u64(self.timestamp_us);
        for q in &self.quadrants {
            out.put_u8(q.present as u8);
            out.put_u16(q.width);
            out.put_u16(q.height);
            out.extend_from_slice(&q.params_digest);
        }
        out.put_u32(self.payload.len() as u32);
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.put_u32(crc);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CompositeError> {
        let truncated = |needed: usize| CompositeError::Truncated { needed, available: bytes.len() };
        if bytes.len() < 4 {
            return Err(truncated(4));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CompositeError::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN));
        }
        let payload_len = u32::from_le_bytes(bytes[HEADER_LEN - 4..HEADER_LEN].try_into().expect("4 bytes")) as usize;
        let total = HEADER_LEN + payload_len + 4;
        if bytes.len() < total {
            return Err(truncated(total));
        }
        if bytes.len() > total {
            return Err(CompositeError::MalformedLayout(format!("{} trailing bytes", bytes.len() - total)));
        }
        let stored = u32::from_le_bytes(bytes[total - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..total - 4]);
        if stored != computed {
            return Err(CompositeError::ChecksumMismatch { stored, computed });
        }

        let mut r = Reader::new(&bytes[4..]);
        let version = r.u16().expect("header length checked");
        if version != VERSION {
            return Err(CompositeError::UnsupportedVersion(version));
        }
        let seq = r.u64().expect("header length checked");
        let timestamp_us = r.u64().expect("header length checked");
        let mut quadrants = [QuadrantInfo::default(); 4];
        for q in quadrants.iter_mut() {
            let present = match r.u8().expect("header length checked") {
                0 => false,
                1 => true,
                other => return Err(CompositeError::MalformedLayout(format!("present flag {other}"))),
            };
            q.present = present;
            q.width = r.u16().expect("header length checked");
            q.height = r.u16().expect("header length checked");
            q.params_digest = r.array().expect("header length checked");
        }
        r.u32();
        let payload = r.take(payload_len).expect("length checked").to_vec();
        let frame = Self { seq, timestamp_us, quadrants, payload };
        frame.validate_layout()?;
        Ok(frame)
    }
}

/// Places sub-frames into composites. Depth quadrants carry the digest of the
/// colorization parameters used to encode them.
#[derive(Debug, Clone)]
pub struct Packer {
    pub max_width: u32,
    pub max_height: u32,
    pub self_depth_digest: [u8; 8],
    pub env_depth_digest: [u8; 8],
}

impl Default for Packer {
    fn default() -> Self {
        Self {
            max_width: 1280,
            max_height: 960,
            self_depth_digest: crate::depthcodec::ColorizationParams::self_profile().digest(),
            env_depth_digest: crate::depthcodec::ColorizationParams::env_profile().digest(),
        }
    }
}

impl Packer {
    pub fn with_max(max_width: u32, max_height: u32) -> Self {
        Self { max_width, max_height, ..Self::default() }
    }

    fn digest_for(&self, q: Quadrant) -> [u8; 8] {
        match q {
            Quadrant::SelfDepth => self.self_depth_digest,
            Quadrant::EnvDepth => self.env_depth_digest,
            _ => [0; 8],
        }
    }

    pub fn pack(&self, frames: &QuadrantFrames, timestamp_us: u64, seq: u64) -> Result<CompositeFrame, CompositeError> {
        let mut quadrants = [QuadrantInfo::default(); 4];
        for q in Quadrant::ALL {
            if let Some(f) = frames.get(q) {
                let limit = (self.max_width.min(u16::MAX as u32), self.max_height.min(u16::MAX as u32));
                if f.width == 0 || f.height == 0 || f.width > limit.0 || f.height > limit.1 {
                    return Err(CompositeError::OversizeQuadrant {
                        quadrant: q,
                        width: f.width,
                        height: f.height,
                        max_width: limit.0,
                        max_height: limit.1,
                    });
                }
                quadrants[q.index()] = QuadrantInfo {
                    present: true,
                    width: f.width as u16,
                    height: f.height as u16,
                    params_digest: self.digest_for(q),
                };
            }
        }
        if !quadrants.iter().any(|q| q.present) {
            return Err(CompositeError::AllAbsent);
        }
        let (cw, ch) = cell_size(&quadrants);
        let stride = 3 * 2 * cw;
        let mut payload = vec![0u8; stride * 2 * ch];
        for q in Quadrant::ALL {
            let Some(f) = frames.get(q) else { continue };
            let (col, row) = q.cell();
            let row_bytes = 3 * f.width as usize;
            for y in 0..f.height as usize {
                let dst = (row * ch + y) * stride + 3 * col * cw;
                payload[dst..dst + row_bytes].copy_from_slice(&f.pixels[y * row_bytes..(y + 1) * row_bytes]);
            }
        }
        Ok(CompositeFrame { seq, timestamp_us, quadrants, payload })
    }
}

pub fn unpack(f: &CompositeFrame) -> Result<Unpacked, CompositeError> {
    f.validate_layout()?;
    let (cw, ch) = cell_size(&f.quadrants);
    let stride = 3 * 2 * cw;
    let mut frames = QuadrantFrames::default();
    for q in Quadrant::ALL {
        let info = f.info(q);
        if !info.present {
            continue;
        }
        let (col, row) = q.cell();
        let (w, h) = (info.width as usize, info.height as usize);
        let mut pixels = Vec::with_capacity(3 * w * h);
        for y in 0..h {
            let src = (row * ch + y) * stride + 3 * col * cw;
            pixels.extend_from_slice(&f.payload[src..src + 3 * w]);
        }
        *frames.slot(q) = Some(ColorFrame { width: w as u32, height: h as u32, pixels });
    }
    Ok(Unpacked { seq: f.seq, timestamp_us: f.timestamp_us, quadrants: f.quadrants, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(w: u32, h: u32, seed: u8) -> ColorFrame {
        let pixels = (0..3 * w * h).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        ColorFrame::new(w, h, pixels).unwrap()
    }

    fn four() -> QuadrantFrames {
        QuadrantFrames {
            self_color: Some(frame(8, 6, 1)),
            self_depth: Some(frame(8, 6, 2)),
            env_color: Some(frame(10, 4, 3)),
            env_depth: Some(frame(5, 7, 4)),
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let packer = Packer::default();
        let c = packer.pack(&four(), 1234, 7).unwrap();
        assert_eq!(c.plane_size(), (20, 14));
        let u = unpack(&c).unwrap();
        assert_eq!(u.frames, four());
        assert_eq!((u.seq, u.timestamp_us), (7, 1234));
        // Field-by-field metadata.
        assert_eq!(u.quadrants[Quadrant::EnvColor.index()], QuadrantInfo { present: true, width: 10, height: 4, params_digest: [0; 8] });
        assert_eq!(u.quadrants[Quadrant::SelfDepth.index()].params_digest, packer.self_depth_digest);
        assert_eq!(u.quadrants[Quadrant::EnvDepth.index()].params_digest, packer.env_depth_digest);
        // Padding right of the env_color quadrant stays black.
        let stride = 3 * 20;
        let row = 7 * stride;
        assert!(c.payload[row + 3 * 4..row + 3 * 10].iter().any(|&b| b != 0));
        assert!(c.payload[(7 + 5) * stride..(7 + 5) * stride + 30].iter().all(|&b| b == 0));
    }

    #[test]
    fn env_color_only() {
        let frames = QuadrantFrames { env_color: Some(frame(6, 4, 9)), ..Default::default() };
        let c = Packer::default().pack(&frames, 0, 0).unwrap();
        for q in [Quadrant::SelfColor, Quadrant::SelfDepth, Quadrant::EnvDepth] {
            assert_eq!(*c.info(q), QuadrantInfo::default());
        }
        let (w, _) = c.plane_size();
        // Top half (self quadrants) is zero-filled.
        assert!(c.payload[..3 * w * 4].iter().all(|&b| b == 0));
        let u = unpack(&c).unwrap();
        assert_eq!(u.frames, frames);
        assert_eq!(u.timestamp_of(Quadrant::SelfColor), None);
    }

    #[test]
    fn pack_errors() {
        let packer = Packer::with_max(8, 8);
        assert_eq!(packer.pack(&QuadrantFrames::default(), 0, 0), Err(CompositeError::AllAbsent));
        let big = QuadrantFrames { self_color: Some(frame(9, 2, 0)), ..Default::default() };
        assert!(matches!(packer.pack(&big, 0, 0), Err(CompositeError::OversizeQuadrant { .. })));
    }

    #[test]
    fn seq_counter_is_preserved() {
        let packer = Packer::default();
        let a = unpack(&packer.pack(&four(), 10, 41).unwrap()).unwrap();
        let b = unpack(&packer.pack(&four(), 20, 42).unwrap()).unwrap();
        assert!(b.seq > a.seq);
    }

    #[test]
    fn serialize_parse_and_corruption() {
        let c = Packer::default().pack(&four(), 99, 3).unwrap();
        let bytes = c.serialize();
        assert_eq!(&bytes[..4], b"DSCF");
        assert_eq!(bytes.len(), HEADER_LEN + c.payload.len() + 4);
        assert_eq!(CompositeFrame::parse(&bytes).unwrap(), c);

        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 17] ^= 0x40;
        assert!(matches!(CompositeFrame::parse(&flipped), Err(CompositeError::ChecksumMismatch { .. })));
        assert!(matches!(CompositeFrame::parse(&[]), Err(CompositeError::Truncated { .. })));
        assert!(matches!(CompositeFrame::parse(&bytes[..bytes.len() - 1]), Err(CompositeError::Truncated { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(CompositeFrame::parse(&magic), Err(CompositeError::BadMagic(_))));
    }

    #[test]
    fn parse_rejects_inconsistent_layout_with_valid_crc() {
        let mut c = Packer::default().pack(&four(), 1, 1).unwrap();
        c.quadrants[0].width = 200;
        let bytes = c.serialize();
        assert!(matches!(CompositeFrame::parse(&bytes), Err(CompositeError::MalformedLayout(_))));
        let mut c = Packer::default().pack(&four(), 1, 1).unwrap();
        c.payload.pop();
        assert!(matches!(unpack(&c), Err(CompositeError::MalformedLayout(_))));
    }

    proptest! {
        #[test]
        fn parse_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = CompositeFrame::parse(&bytes);
        }
    }
}
