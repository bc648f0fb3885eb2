//! Depth colorization: metric depth in, video-friendly RGB out, and back.
//!
//! Depth is quantized into `lut_bins` levels over `[0, d_max]`, each level
//! mapped to one colormap entry. Decoding picks the nearest entry in RGB space,
//! which keeps it total and tolerant of small channel noise.

mod align;
mod turbo;

use std::sync::OnceLock;

use thiserror::Error;

pub use align::{align_to_reference, Alignable};

/// Range of the front-facing (self) stream in meters.
pub const SELF_RANGE_M: f64 = 0.8;
/// Range of the rear-facing (environment) stream in meters.
pub const ENV_RANGE_M: f64 = 2.0;
pub const DEFAULT_LUT_BINS: usize = 256;
/// Minimum L1 distance between the invalid color and every colormap entry.
pub const INVALID_COLOR_MIN_L1: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("invalid colorization parameters: {0}")]
    InvalidParams(String),
    #[error("colormap cannot distinguish {bins} bins: entries {first} and {second} coincide")]
    DuplicateEntry { bins: usize, first: usize, second: usize },
    #[error("invalid color {color:?} lies within L1 {min} of colormap entry {index}")]
    InvalidColorOnCurve { color: [u8; 3], index: usize, min: u32 },
    #[error("frame dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("destination view is not covered by the source: {0}")]
    UncoverableArea(String),
}

/// Metric depth, millimeters, row-major. Zero marks a missing reading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    pub width: u32,
    pub height: u32,
    pub samples: Vec<u16>,
}

impl DepthFrame {
    pub fn new(width: u32, height: u32, samples: Vec<u16>) -> Result<Self, CodecError> {
        if samples.len() != width as usize * height as usize {
            return Err(CodecError::DimensionMismatch(format!(
                "{} samples for {}x{} depth frame",
                samples.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, samples })
    }

    pub fn filled(width: u32, height: u32, mm: u16) -> Self {
        Self { width, height, samples: vec![mm; width as usize * height as usize] }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> u16 {
        self.samples[(v * self.width + u) as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.samples.iter().filter(|&&s| s != 0).count()
    }
}

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorFrame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl ColorFrame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, CodecError> {
        if pixels.len() != 3 * width as usize * height as usize {
            return Err(CodecError::DimensionMismatch(format!(
                "{} bytes for {}x{} color frame",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, pixels: rgb.iter().copied().cycle().take(3 * n).collect() }
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> [u8; 3] {
        let i = 3 * (v * self.width + u) as usize;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, u: u32, v: u32, rgb: [u8; 3]) {
        let i = 3 * (v * self.width + u) as usize;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Depth in meters after decoding, before storage rounding. `None` is a
/// missing reading.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricDepth {
    pub width: u32,
    pub height: u32,
    pub meters: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorScheme {
    TurboHue,
    LinearGray,
}

impl ColorScheme {
    pub fn name(self) -> &'static str {
        match self {
            ColorScheme::TurboHue => "turbo",
            ColorScheme::LinearGray => "gray",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "turbo" | "turbohue" | "turbo_hue" => Some(ColorScheme::TurboHue),
            "gray" | "grey" | "lineargray" | "linear_gray" => Some(ColorScheme::LinearGray),
            _ => None,
        }
    }

    /// Invalid-pixel color used when none is configured.
    pub fn default_invalid_color(self) -> [u8; 3] {
        match self {
            ColorScheme::TurboHue => [0, 0, 0],
            // Black and white are both on the gray ramp.
            ColorScheme::LinearGray => [255, 0, 255],
        }
    }

    /// Samples the continuous colormap at `t ∈ [0, 1]`.
    pub fn sample(self, t: f64) -> [u8; 3] {
        let t = t.clamp(0.0, 1.0);
        match self {
            ColorScheme::LinearGray => {
                let g = (255.0 * t).round() as u8;
                [g, g, g]
            }
            ColorScheme::TurboHue => {
                let x = t * 255.0;
                let i0 = (x.floor() as usize).min(254);
                let frac = x - i0 as f64;
                let (a, b) = (turbo::TURBO[i0], turbo::TURBO[i0 + 1]);
                let mut out = [0u8; 3];
                for c in 0..3 {
                    let v = a[c] + (b[c] - a[c]) * frac;
                    out[c] = (255.0 * v).round().clamp(0.0, 255.0) as u8;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorizationParams {
    pub scheme: ColorScheme,
    /// Depth mapped to the last colormap entry, meters.
    pub d_max: f64,
    pub lut_bins: usize,
    pub invalid_color: [u8; 3],
}

impl ColorizationParams {
    pub fn new(scheme: ColorScheme, d_max: f64, lut_bins: usize) -> Self {
        Self { scheme, d_max, lut_bins, invalid_color: scheme.default_invalid_color() }
    }

    /// Front camera profile.
    pub fn self_profile() -> Self {
        Self::new(ColorScheme::TurboHue, SELF_RANGE_M, DEFAULT_LUT_BINS)
    }

    /// Rear camera profile.
    pub fn env_profile() -> Self {
        Self::new(ColorScheme::TurboHue, ENV_RANGE_M, DEFAULT_LUT_BINS)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(self.d_max.is_finite() && self.d_max > 0.0) {
            return Err(CodecError::InvalidParams(format!("d_max must be positive, got {}", self.d_max)));
        }
        if self.d_max * 1000.0 > u16::MAX as f64 {
            return Err(CodecError::InvalidParams(format!("d_max {} m exceeds 16-bit millimeters", self.d_max)));
        }
        if self.lut_bins < 2 || self.lut_bins > u16::MAX as usize {
            return Err(CodecError::InvalidParams(format!("lut_bins must be in [2, 65535], got {}", self.lut_bins)));
        }
        Ok(())
    }

    /// 8-byte fingerprint carried in composite headers.
    pub fn digest(&self) -> [u8; 8] {
        let mut bytes = Vec::with_capacity(24);
        bytes.push(match self.scheme {
            ColorScheme::TurboHue => 1,
            ColorScheme::LinearGray => 2,
        });
        bytes.extend_from_slice(&self.d_max.to_le_bytes());
        bytes.extend_from_slice(&(self.lut_bins as u32).to_le_bytes());
        bytes.extend_from_slice(&self.invalid_color);
        crate::digest8(&bytes)
    }
}

/// Worst-case clean-channel round-trip error in meters.
pub fn quantization_bound(params: &ColorizationParams) -> f64 {
    params.d_max / (2.0 * (params.lut_bins - 1) as f64)
}

const GRID_SHIFT: u32 = 4;
const GRID_SIDE: usize = 256 >> GRID_SHIFT;

/// Candidate lists per RGB grid cell: every palette color that can be the
/// nearest one for some point inside the cell.
#[derive(Debug)]
struct NearestGrid {
    offsets: Vec<u32>,
    candidates: Vec<u16>,
}

impl NearestGrid {
    fn build(palette: &[[u8; 3]]) -> Self {
        let cell = 1i64 << GRID_SHIFT;
        let mut offsets = Vec::with_capacity(GRID_SIDE.pow(3) + 1);
        let mut candidates = Vec::new();
        offsets.push(0);
        let mut min_d = vec![0i64; palette.len()];
        for r in 0..GRID_SIDE {
            for g in 0..GRID_SIDE {
                for b in 0..GRID_SIDE {
                    let lo = [r as i64 * cell, g as i64 * cell, b as i64 * cell];
                    let mut bound = i64::MAX;
                    for (slot, e) in min_d.iter_mut().zip(palette) {
                        let mut near = 0;
                        let mut far = 0;
                        for c in 0..3 {
                            let (l, h, x) = (lo[c], lo[c] + cell - 1, e[c] as i64);
                            let gap = (l - x).max(x - h).max(0);
                            let span = (x - l).abs().max((x - h).abs());
                            near += gap * gap;
                            far += span * span;
                        }
                        *slot = near;
                        bound = bound.min(far);
                    }
                    for (i, &d) in min_d.iter().enumerate() {
                        if d <= bound {
                            candidates.push(i as u16);
                        }
                    }
                    offsets.push(candidates.len() as u32);
                }
            }
        }
        Self { offsets, candidates }
    }

    #[inline]
    fn cell_candidates(&self, rgb: [u8; 3]) -> &[u16] {
        let s = GRID_SHIFT;
        let idx = ((rgb[0] as usize >> s) * GRID_SIDE + (rgb[1] as usize >> s)) * GRID_SIDE + (rgb[2] as usize >> s);
        &self.candidates[self.offsets[idx] as usize..self.offsets[idx + 1] as usize]
    }
}

#[inline]
fn dist2(a: [u8; 3], b: [u8; 3]) -> i32 {
    let dr = a[0] as i32 - b[0] as i32;
    let dg = a[1] as i32 - b[1] as i32;
    let db = a[2] as i32 - b[2] as i32;
    dr * dr + dg * dg + db * db
}

/// Colormap sampled at `lut_bins` evenly spaced depths.
#[derive(Debug)]
pub struct ColorLut {
    params: ColorizationParams,
    entries: Vec<[u8; 3]>,
    grid: OnceLock<NearestGrid>,
}

impl Clone for ColorLut {
    fn clone(&self) -> Self {
        Self { params: self.params, entries: self.entries.clone(), grid: OnceLock::new() }
    }
}

pub fn build_lut(params: &ColorizationParams) -> Result<ColorLut, CodecError> {
    params.validate()?;
    let n = params.lut_bins;
    let entries: Vec<[u8; 3]> = (0..n).map(|i| params.scheme.sample(i as f64 / (n - 1) as f64)).collect();

    let mut seen = std::collections::HashMap::with_capacity(n);
    for (i, e) in entries.iter().enumerate() {
        if let Some(&first) = seen.get(e) {
            return Err(CodecError::DuplicateEntry { bins: n, first, second: i });
        }
        seen.insert(*e, i);
    }
    for (i, e) in entries.iter().enumerate() {
        let l1: u32 = (0..3).map(|c| (e[c] as i32 - params.invalid_color[c] as i32).unsigned_abs()).sum();
        if l1 < INVALID_COLOR_MIN_L1 {
            return Err(CodecError::InvalidColorOnCurve { color: params.invalid_color, index: i, min: INVALID_COLOR_MIN_L1 });
        }
    }
    Ok(ColorLut { params: *params, entries, grid: OnceLock::new() })
}

impl ColorLut {
    pub fn params(&self) -> &ColorizationParams {
        &self.params
    }

    pub fn entries(&self) -> &[[u8; 3]] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Smallest Euclidean RGB distance between any two palette colors,
    /// the invalid color included.
    pub fn min_entry_distance(&self) -> f64 {
        let palette = self.palette();
        let mut best = i32::MAX;
        for i in 0..palette.len() {
            for j in i + 1..palette.len() {
                best = best.min(dist2(palette[i], palette[j]));
            }
        }
        (best as f64).sqrt()
    }

    fn palette(&self) -> Vec<[u8; 3]> {
        let mut p = self.entries.clone();
        p.push(self.params.invalid_color);
        p
    }

    fn grid(&self) -> &NearestGrid {
        self.grid.get_or_init(|| NearestGrid::build(&self.palette()))
    }

    /// Bin index for a depth in millimeters; `None` for a missing reading.
    #[inline]
    pub fn bin_for_mm(&self, mm: u16) -> Option<usize> {
        if mm == 0 {
            return None;
        }
        let top = (self.entries.len() - 1) as f64;
        let scaled = mm as f64 * top / (self.params.d_max * 1000.0);
        Some(scaled.round().min(top) as usize)
    }

    /// Nearest palette entry; `None` when the invalid color is strictly nearer
    /// than every entry. Ties go to the lower index.
    #[inline]
    pub fn nearest_bin(&self, rgb: [u8; 3]) -> Option<usize> {
        let invalid = self.entries.len();
        let mut best = (i32::MAX, invalid);
        for &i in self.grid().cell_candidates(rgb) {
            let i = i as usize;
            let color = if i == invalid { self.params.invalid_color } else { self.entries[i] };
            let d = dist2(rgb, color);
            if d < best.0 {
                best = (d, i);
            }
        }
        (best.1 != invalid).then_some(best.1)
    }

    /// Depth represented by bin `i`, meters.
    #[inline]
    pub fn bin_depth_m(&self, i: usize) -> f64 {
        i as f64 / (self.entries.len() - 1) as f64 * self.params.d_max
    }

    /// Millimeter depth for bin `i`. Bin 0 is stored as 1 mm so that a valid
    /// reading never collides with the missing-reading value 0.
    #[inline]
    pub fn bin_depth_mm(&self, i: usize) -> u16 {
        ((1000.0 * self.bin_depth_m(i)).round() as u16).max(1)
    }
}

pub fn encode_depth(d: &DepthFrame, lut: &ColorLut) -> ColorFrame {
    let mut pixels = vec![0u8; 3 * d.samples.len()];
    let invalid = lut.params.invalid_color;
    let top = (lut.entries.len() - 1) as f64;
    let scale = top / (lut.params.d_max * 1000.0);
    for (px, &mm) in pixels.chunks_exact_mut(3).zip(&d.samples) {
        // Same rule as `bin_for_mm`, with the scale hoisted.
        let rgb = match mm {
            0 => invalid,
            _ => lut.entries[(mm as f64 * scale).round().min(top) as usize],
        };
        px.copy_from_slice(&rgb);
    }
    ColorFrame { width: d.width, height: d.height, pixels }
}

const MEMO_BITS: u32 = 12;
const MEMO_EMPTY: u32 = u32::MAX;
const MEMO_INVALID: u16 = u16::MAX;

/// Direct-mapped cache in front of [`ColorLut::nearest_bin`]. Decoded frames
/// use few distinct colors, so most pixels hit.
struct NearestMemo<'a> {
    lut: &'a ColorLut,
    keys: Vec<u32>,
    bins: Vec<u16>,
}

impl<'a> NearestMemo<'a> {
    fn new(lut: &'a ColorLut) -> Self {
        Self { lut, keys: vec![MEMO_EMPTY; 1 << MEMO_BITS], bins: vec![0; 1 << MEMO_BITS] }
    }

    #[inline]
    fn get(&mut self, p: &[u8]) -> Option<usize> {
        let key = (p[0] as u32) << 16 | (p[1] as u32) << 8 | p[2] as u32;
        let slot = (key.wrapping_mul(0x9E37_79B1) >> (32 - MEMO_BITS)) as usize;
        if self.keys[slot] != key {
            self.keys[slot] = key;
            self.bins[slot] = self.lut.nearest_bin([p[0], p[1], p[2]]).map_or(MEMO_INVALID, |i| i as u16);
        }
        match self.bins[slot] {
            MEMO_INVALID => None,
            i => Some(i as usize),
        }
    }
}

/// Decodes to millimeter depth: `round(1000 · i/(bins−1) · d_max)`, at least 1.
pub fn decode_depth(c: &ColorFrame, lut: &ColorLut) -> DepthFrame {
    let mm: Vec<u16> = (0..lut.len()).map(|i| lut.bin_depth_mm(i)).collect();
    let mut memo = NearestMemo::new(lut);
    let samples = c.pixels.chunks_exact(3).map(|p| memo.get(p).map_or(0, |i| mm[i])).collect();
    DepthFrame { width: c.width, height: c.height, samples }
}

/// Decodes to unrounded metric depth.
pub fn decode_depth_metric(c: &ColorFrame, lut: &ColorLut) -> MetricDepth {
    let m: Vec<f64> = (0..lut.len()).map(|i| lut.bin_depth_m(i)).collect();
    let mut memo = NearestMemo::new(lut);
    let meters = c.pixels.chunks_exact(3).map(|p| memo.get(p).map(|i| m[i])).collect();
    MetricDepth { width: c.width, height: c.height, meters }
}
