//! Throughput of the full per-frame pipeline on synthetic input.

use std::fmt;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::composite::{unpack, CompositeError, CompositeFrame, Packer, QuadrantFrames};
use crate::depthcodec::{
    build_lut, decode_depth_metric, encode_depth, CodecError, ColorFrame, ColorLut, ColorizationParams, DepthFrame,
};
use crate::geometry::{intrinsics_from_fov, GeometryError, Intrinsics, Pose};
use crate::pointcloud::{reconstruct_hologram_metric, CloudError};
use crate::scene::Scene;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Composite(#[from] CompositeError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Inputs for one sender frame: raw color and depth for both streams.
#[derive(Debug, Clone)]
pub struct PipelineInput {
    pub k: Intrinsics,
    pub self_color: ColorFrame,
    pub self_depth: DepthFrame,
    pub env_color: ColorFrame,
    pub env_depth: DepthFrame,
}

impl PipelineInput {
    /// A sphere for the self stream and a ramp for the environment.
    pub fn synthetic(width: u32, height: u32) -> Result<Self, BenchError> {
        let k = intrinsics_from_fov(60.0, 45.0, width, height)?;
        let me = Scene::Sphere { radius: 0.2, distance: 0.6 }.render(&k);
        let env = Scene::Ramp { near: 0.4, far: 1.9 }.render(&k);
        Ok(Self { k, self_color: me.color, self_depth: me.depth, env_color: env.color, env_depth: env.depth })
    }
}

/// Long-lived state of the pipeline (LUTs and packer).
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub self_lut: ColorLut,
    pub env_lut: ColorLut,
    pub packer: Packer,
}

impl Pipeline {
    pub fn new() -> Result<Self, BenchError> {
        Ok(Self {
            self_lut: build_lut(&ColorizationParams::self_profile())?,
            env_lut: build_lut(&ColorizationParams::env_profile())?,
            packer: Packer::default(),
        })
    }

    /// Sender half: colorize depth and pack all four quadrants.
    pub fn send(&self, input: &PipelineInput, timestamp_us: u64, seq: u64) -> Result<CompositeFrame, BenchError> {
        let frames = QuadrantFrames {
            self_color: Some(input.self_color.clone()),
            self_depth: Some(encode_depth(&input.self_depth, &self.self_lut)),
            env_color: Some(input.env_color.clone()),
            env_depth: Some(encode_depth(&input.env_depth, &self.env_lut)),
        };
        Ok(self.packer.pack(&frames, timestamp_us, seq)?)
    }

    /// Receiver half on wire bytes: parse, unpack, decode and reconstruct
    /// both streams. Returns the total point count.
    pub fn receive(&self, bytes: &[u8], k: &Intrinsics, pose: &Pose) -> Result<usize, BenchError> {
        let frame = CompositeFrame::parse(bytes)?;
        let parts = unpack(&frame)?;
        let mut points = 0;
        for (color, depth, lut) in [
            (&parts.frames.self_color, &parts.frames.self_depth, &self.self_lut),
            (&parts.frames.env_color, &parts.frames.env_depth, &self.env_lut),
        ] {
            if let (Some(color), Some(depth)) = (color, depth) {
                let metric = decode_depth_metric(depth, lut);
                points += reconstruct_hologram_metric(color, &metric, k, pose)?.len();
            }
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub width: u32,
    pub height: u32,
    pub iterations: u64,
    pub elapsed: Duration,
    /// Points reconstructed per iteration.
    pub points: usize,
}

impl BenchReport {
    pub fn fps(&self) -> Option<f64> {
        (self.iterations > 0 && !self.elapsed.is_zero()).then(|| self.iterations as f64 / self.elapsed.as_secs_f64())
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "resolution={}x{}", self.width, self.height)?;
        writeln!(f, "iterations={}", self.iterations)?;
        if let Some(fps) = self.fps() {
            writeln!(f, "elapsed_s={:.6}", self.elapsed.as_secs_f64())?;
            writeln!(f, "ms_per_frame={:.3}", 1000.0 / fps)?;
            writeln!(f, "fps={fps:.1}")?;
            writeln!(f, "points_per_frame={}", self.points)?;
        }
        Ok(())
    }
}

/// Runs encode → pack → serialize → parse → unpack → decode → reconstruct
/// `iterations` times at `width`×`height` per quadrant. Input generation and
/// LUT construction happen before the clock starts.
pub fn run_bench(width: u32, height: u32, iterations: u64) -> Result<BenchReport, BenchError> {
    let mut report = BenchReport { width, height, iterations, elapsed: Duration::ZERO, points: 0 };
    if iterations == 0 {
        return Ok(report);
    }
    let input = PipelineInput::synthetic(width, height)?;
    let pipeline = Pipeline::new()?;
    let pose = Pose::identity();
    let start = Instant::now();
    for i in 0..iterations {
        let bytes = pipeline.send(&input, i * 33_333, i)?.serialize();
        report.points = pipeline.receive(&bytes, &input.k, &pose)?;
    }
    report.elapsed = start.elapsed();
    Ok(report)
}
