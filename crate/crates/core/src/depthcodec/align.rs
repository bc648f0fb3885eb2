//! Field-of-view alignment between co-located cameras.
//!
//! Output pixel `(u, v)` under `dst_k` views the same ray as source position
//! `(cx_s + fx_s·(u − cx_d)/fx_d, cy_s + fy_s·(v − cy_d)/fy_d)`. Depth is
//! resampled nearest-neighbor (interpolating depth across edges invents
//! surfaces), color bilinearly.

use super::{CodecError, ColorFrame, DepthFrame};
use crate::geometry::Intrinsics;

const EDGE_EPS: f64 = 1e-9;

/// A frame that can be resampled onto another camera's pixel grid.
pub trait Alignable: Sized + Clone {
    fn dims(&self) -> (u32, u32);
    fn resample(&self, map_x: &[f64], map_y: &[f64]) -> Self;
}

impl Alignable for DepthFrame {
    fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn resample(&self, map_x: &[f64], map_y: &[f64]) -> Self {
        let (w, h) = (self.width as i64, self.height as i64);
        let cols: Vec<usize> = map_x.iter().map(|&x| ((x + 0.5).floor() as i64).clamp(0, w - 1) as usize).collect();
        let mut samples = Vec::with_capacity(map_x.len() * map_y.len());
        for &y in map_y {
            let row = ((y + 0.5).floor() as i64).clamp(0, h - 1) as usize * self.width as usize;
            samples.extend(cols.iter().map(|&c| self.samples[row + c]));
        }
        DepthFrame { width: map_x.len() as u32, height: map_y.len() as u32, samples }
    }
}

fn bilinear_taps(x: f64, len: u32) -> (usize, usize, f64) {
    let x = x.clamp(0.0, (len - 1) as f64);
    let x0 = x.floor() as usize;
    let x1 = (x0 + 1).min(len as usize - 1);
    (x0, x1, x - x0 as f64)
}

impl Alignable for ColorFrame {
    fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn resample(&self, map_x: &[f64], map_y: &[f64]) -> Self {
        let stride = 3 * self.width as usize;
        let cols: Vec<_> = map_x.iter().map(|&x| bilinear_taps(x, self.width)).collect();
        let mut pixels = Vec::with_capacity(3 * map_x.len() * map_y.len());
        for &y in map_y {
            let (y0, y1, fy) = bilinear_taps(y, self.height);
            let (r0, r1) = (&self.pixels[y0 * stride..], &self.pixels[y1 * stride..]);
            for &(x0, x1, fx) in &cols {
                for c in 0..3 {
                    let top = r0[3 * x0 + c] as f64 * (1.0 - fx) + r0[3 * x1 + c] as f64 * fx;
                    let bottom = r1[3 * x0 + c] as f64 * (1.0 - fx) + r1[3 * x1 + c] as f64 * fx;
                    pixels.push((top * (1.0 - fy) + bottom * fy).round() as u8);
                }
            }
        }
        ColorFrame { width: map_x.len() as u32, height: map_y.len() as u32, pixels }
    }
}

fn axis_map(dst_len: u32, dst_c: f64, dst_f: f64, src_len: u32, src_c: f64, src_f: f64, axis: &str) -> Result<Vec<f64>, CodecError> {
    let map: Vec<f64> = (0..dst_len).map(|i| src_c + src_f * (i as f64 - dst_c) / dst_f).collect();
    let (first, last) = (map[0], map[map.len() - 1]);
    let (lo, hi) = (-0.5 - EDGE_EPS, src_len as f64 - 0.5 + EDGE_EPS);
    if first < lo || last > hi {
        return Err(CodecError::UncoverableArea(format!(
            "{axis} spans source pixels [{first:.3}, {last:.3}] outside [-0.5, {:.1}]",
            src_len as f64 - 0.5
        )));
    }
    Ok(map)
}

/// Crops and resamples `src` (seen through `src_k`) so that it appears as
/// seen through `dst_k`. Both cameras share one optical center.
pub fn align_to_reference<F: Alignable>(src: &F, src_k: &Intrinsics, dst_k: &Intrinsics) -> Result<F, CodecError> {
    if src.dims() != (src_k.width, src_k.height) {
        return Err(CodecError::DimensionMismatch(format!(
            "frame is {:?} but source intrinsics are {}x{}",
            src.dims(),
            src_k.width,
            src_k.height
        )));
    }
    if src_k == dst_k {
        return Ok(src.clone());
    }
    let map_x = axis_map(dst_k.width, dst_k.cx, dst_k.fx, src_k.width, src_k.cx, src_k.fx, "horizontal")?;
    let map_y = axis_map(dst_k.height, dst_k.cy, dst_k.fy, src_k.height, src_k.cy, src_k.fy, "vertical")?;
    Ok(src.resample(&map_x, &map_y))
}
