//! Deterministic transport and degradation models.
//!
//! Time is kept in integer microseconds. Every random draw comes from a
//! ChaCha stream keyed by the link seed and the packet's index on that link,
//! so a packet's fate does not depend on what else was simulated.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::composite::CompositeFrame;
use crate::config::{Config, ConfigError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid link model: {0}")]
    InvalidLink(String),
    #[error("invalid degradation model: {0}")]
    InvalidDegradation(String),
    #[error("event time {time_us} µs precedes link clock {clock_us} µs")]
    ClockWentBackwards { time_us: u64, clock_us: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub base_latency_ms: f64,
    /// Half-width of the uniform jitter window.
    pub jitter_ms: f64,
    pub loss_prob: f64,
    pub seed: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self { base_latency_ms: 0.0, jitter_ms: 0.0, loss_prob: 0.0, seed: 0 }
    }
}

impl LinkModel {
    pub fn new(base_latency_ms: f64, jitter_ms: f64, loss_prob: f64, seed: u64) -> Result<Self, NetError> {
        let m = Self { base_latency_ms, jitter_ms, loss_prob, seed };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |msg: String| Err(NetError::InvalidLink(msg));
        if !self.base_latency_ms.is_finite() || self.base_latency_ms < 0.0 {
            return bad(format!("base latency {} ms", self.base_latency_ms));
        }
        if !self.jitter_ms.is_finite() || self.jitter_ms < 0.0 {
            return bad(format!("jitter {} ms", self.jitter_ms));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return bad(format!("loss probability {}", self.loss_prob));
        }
        Ok(())
    }

    /// Reads `base_ms`, `jitter_ms`, `loss` and `seed`; absent keys keep the
    /// values of `self`.
    pub fn with_config(&self, cfg: &Config) -> Result<Self, NetError> {
        let m = Self {
            base_latency_ms: cfg.get_or("base_ms", self.base_latency_ms)?,
            jitter_ms: cfg.get_or("jitter_ms", self.jitter_ms)?,
            loss_prob: cfg.get_or("loss", self.loss_prob)?,
            seed: cfg.get_or("seed", self.seed)?,
        };
        m.validate()?;
        Ok(m)
    }

    /// Fate of packet number `index` on this link: `None` when dropped,
    /// otherwise its one-way latency in microseconds.
    pub fn draw(&self, index: u64) -> Option<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let loss: f64 = rng.random();
        let jitter: f64 = rng.random_range(-1.0..=1.0) * self.jitter_ms;
        if loss < self.loss_prob {
            return None;
        }
        let ms = (self.base_latency_ms + jitter).max(0.0);
        Some((ms * 1000.0).round() as u64)
    }
}

impl fmt::Display for LinkModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "base_ms={} jitter_ms={} loss={} seed={}",
            self.base_latency_ms, self.jitter_ms, self.loss_prob, self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    At(u64),
    Dropped,
}

/// One directed link with FIFO delivery.
#[derive(Debug, Clone)]
pub struct Link {
    pub model: LinkModel,
    clock_us: u64,
    last_delivery_us: u64,
    next_index: u64,
}

impl Link {
    pub fn new(model: LinkModel) -> Self {
        Self { model, clock_us: 0, last_delivery_us: 0, next_index: 0 }
    }

    /// Packets handed to the link so far (including dropped ones).
    pub fn packets_sent(&self) -> u64 {
        self.next_index
    }

    /// Sends one packet at `time_us`. Delivery times never decrease, so a
    /// packet delayed by jitter holds back the ones behind it.
    pub fn schedule(&mut self, time_us: u64) -> Result<Delivery, NetError> {
        self.advance(time_us)?;
        Ok(self.transmit(time_us))
    }

    /// Like [`schedule`](Self::schedule) but resends after `rto_us` until a
    /// copy gets through. Returns the delivery time and the attempt count.
    /// With `loss_prob == 1` nothing ever arrives and `None` is returned
    /// after `max_attempts`. Retransmissions do not move the send clock.
    pub fn schedule_reliable(&mut self, time_us: u64, rto_us: u64, max_attempts: u32) -> Result<Option<(u64, u32)>, NetError> {
        self.advance(time_us)?;
        let mut t = time_us;
        for attempt in 1..=max_attempts {
            if let Delivery::At(at) = self.transmit(t) {
                return Ok(Some((at, attempt)));
            }
            t += rto_us;
        }
        Ok(None)
    }

    fn advance(&mut self, time_us: u64) -> Result<(), NetError> {
        if time_us < self.clock_us {
            return Err(NetError::ClockWentBackwards { time_us, clock_us: self.clock_us });
        }
        self.clock_us = time_us;
        Ok(())
    }

    fn transmit(&mut self, time_us: u64) -> Delivery {
        let index = self.next_index;
        self.next_index += 1;
        match self.model.draw(index) {
            None => Delivery::Dropped,
            Some(latency) => {
                let at = (time_us + latency).max(self.last_delivery_us);
                self.last_delivery_us = at;
                Delivery::At(at)
            }
        }
    }
}

/// Min-heap of timed events; ties pop in insertion order.
#[derive(Debug)]
pub struct EventQueue<T> {
    heap: BinaryHeap<Reverse<(u64, u64, Slot<T>)>>,
    inserted: u64,
}

#[derive(Debug)]
struct Slot<T>(T);

impl<T> PartialEq for Slot<T> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
impl<T> Eq for Slot<T> {}
impl<T> PartialOrd for Slot<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Slot<T> {
    fn cmp(&self, _: &Self) -> std::cmp::Ordering {
        std::cmp::Ordering::Equal
    }
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), inserted: 0 }
    }
}

impl<T> EventQueue<T> {
    pub fn push(&mut self, time_us: u64, event: T) {
        self.heap.push(Reverse((time_us, self.inserted, Slot(event))));
        self.inserted += 1;
    }

    pub fn pop(&mut self) -> Option<(u64, T)> {
        self.heap.pop().map(|Reverse((t, _, Slot(e)))| (t, e))
    }

    pub fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse((t, _, _))| *t)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    State,
    Av,
    /// Session-level records such as the closing summary.
    Session,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::State => "state",
            Channel::Av => "av",
            Channel::Session => "session",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Send,
    Deliver,
    Drop,
    Summary,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Send => "send",
            EventKind::Deliver => "deliver",
            EventKind::Drop => "drop",
            EventKind::Summary => "summary",
        }
    }
}

/// One line of the event log:
/// `time_us channel event size id [key=value ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub time_us: u64,
    pub channel: Channel,
    pub event: EventKind,
    pub size: usize,
    /// Identifies the packet across its send/deliver/drop records.
    pub id: String,
    pub fields: Vec<(String, String)>,
}

impl LogRecord {
    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {} {}", self.time_us, self.channel.name(), self.event.name(), self.size, self.id)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for LogRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut it = line.split_whitespace();
        let mut next = |what: &str| it.next().ok_or_else(|| format!("missing {what} in {line:?}"));
        let time_us = next("time")?.parse().map_err(|e| format!("time: {e}"))?;
        let channel = match next("channel")? {
            "state" => Channel::State,
            "av" => Channel::Av,
            "session" => Channel::Session,
            other => return Err(format!("unknown channel {other:?}")),
        };
        let event = match next("event")? {
            "send" => EventKind::Send,
            "deliver" => EventKind::Deliver,
            "drop" => EventKind::Drop,
            "summary" => EventKind::Summary,
            other => return Err(format!("unknown event {other:?}")),
        };
        let size = next("size")?.parse().map_err(|e| format!("size: {e}"))?;
        let id = next("id")?.to_string();
        let fields = it
            .map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| format!("bad field {kv:?}")))
            .collect::<Result<_, _>>()?;
        Ok(Self { time_us, channel, event, size, id, fields })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChromaSubsampling {
    #[default]
    None,
    Yuv420,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationModel {
    pub chroma: ChromaSubsampling,
    /// Standard deviation of additive Gaussian noise, in RGB levels.
    pub noise_sigma: f64,
    /// Uniform quantizer step per channel; 1 leaves values unchanged.
    pub quant_step: u8,
}

impl Default for DegradationModel {
    fn default() -> Self {
        Self { chroma: ChromaSubsampling::None, noise_sigma: 0.0, quant_step: 1 }
    }
}

impl DegradationModel {
    pub fn validate(&self) -> Result<(), NetError> {
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(NetError::InvalidDegradation(format!("noise sigma {}", self.noise_sigma)));
        }
        if self.quant_step == 0 {
            return Err(NetError::InvalidDegradation("quantizer step must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.chroma == ChromaSubsampling::None && self.noise_sigma == 0.0 && self.quant_step == 1
    }

    /// Reads `chroma` (`none` or `420`), `sigma` and `quant`.
    pub fn with_config(&self, cfg: &Config) -> Result<Self, NetError> {
        let chroma = match cfg.get_str("chroma") {
            None => self.chroma,
            Some("none") => ChromaSubsampling::None,
            Some("420") | Some("4:2:0") => ChromaSubsampling::Yuv420,
            Some(other) => return Err(NetError::InvalidDegradation(format!("chroma mode {other:?}"))),
        };
        let m = Self {
            chroma,
            noise_sigma: cfg.get_or("sigma", self.noise_sigma)?,
            quant_step: cfg.get_or("quant", self.quant_step)?,
        };
        m.validate()?;
        Ok(m)
    }
}

impl fmt::Display for DegradationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let chroma = match self.chroma {
            ChromaSubsampling::None => "none",
            ChromaSubsampling::Yuv420 => "420",
        };
        write!(f, "chroma={chroma} sigma={} quant={}", self.noise_sigma, self.quant_step)
    }
}

// Full-range BT.601.
fn rgb_to_ycbcr(p: &[u8]) -> [f64; 3] {
    let (r, g, b) = (p[0] as f64, p[1] as f64, p[2] as f64);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    [y, (b - y) / 1.772, (r - y) / 1.402]
}

fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> [u8; 3] {
    let r = y + 1.402 * cr;
    let b = y + 1.772 * cb;
    let g = (y - 0.299 * r - 0.114 * b) / 0.587;
    [r, g, b].map(|c| c.round().clamp(0.0, 255.0) as u8)
}

/// 4:2:0 chroma loss: chroma is averaged over each 2×2 block (partial blocks
/// at odd edges average what they cover), luma is kept per pixel.
fn subsample_420(pixels: &mut [u8], width: usize, height: usize) {
    for by in (0..height).step_by(2) {
        for bx in (0..width).step_by(2) {
            let mut block = [(0usize, [0f64; 3]); 4];
            let mut n = 0;
            for y in by..(by + 2).min(height) {
                for x in bx..(bx + 2).min(width) {
                    let i = 3 * (y * width + x);
                    block[n] = (i, rgb_to_ycbcr(&pixels[i..i + 3]));
                    n += 1;
                }
            }
            let cb = block[..n].iter().map(|(_, c)| c[1]).sum::<f64>() / n as f64;
            let cr = block[..n].iter().map(|(_, c)| c[2]).sum::<f64>() / n as f64;
            for (i, c) in &block[..n] {
                pixels[*i..*i + 3].copy_from_slice(&ycbcr_to_rgb(c[0], cb, cr));
            }
        }
    }
}

/// Applies chroma subsampling, then quantization, then noise to the payload
/// plane. Header fields are left as they were.
pub fn degrade(f: &CompositeFrame, m: &DegradationModel, seed: u64) -> CompositeFrame {
    let mut out = f.clone();
    if m.is_identity() {
        return out;
    }
    let (w, h) = f.plane_size();
    if m.chroma == ChromaSubsampling::Yuv420 {
        subsample_420(&mut out.payload, w, h);
    }
    if m.quant_step > 1 {
        let q = m.quant_step as f64;
        for c in out.payload.iter_mut() {
            *c = ((*c as f64 / q).round() * q).min(255.0) as u8;
        }
    }
    if m.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, m.noise_sigma).expect("sigma validated as finite and non-negative");
        for c in out.payload.iter_mut() {
            *c = (*c as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}
