//! Scripted multi-peer sessions on top of the discrete-event transport.
//!
//! A script is line based: `<t_ms> <peer|-> <verb> [args...]`, `#` starts a
//! comment. Verbs on `-` configure the session (`link`, `degrade`, `fps`,
//! `end`); the rest act on a peer defined earlier with `peer`.
//!
//! Each peer keeps its own replica of the room state. State messages go to
//! every defined peer over a reliable in-order link (losses become
//! retransmissions); composite frames go to the peers the sender believes
//! are in the room, over a lossy in-order link.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::composite::{unpack, CompositeFrame, Packer, Quadrant, QuadrantFrames};
use crate::config::{parse_floats, Config};
use crate::depthcodec::{
    build_lut, decode_depth_metric, encode_depth, ColorLut, ColorizationParams, DepthFrame, MetricDepth,
};
use crate::geometry::{from_anchor_frame, intrinsics_from_fov, to_anchor_frame, AnchorFrame, Intrinsics, Pose, Vec3};
use crate::netsim::{
    degrade, Channel, DegradationModel, EventKind, EventQueue, Link, LinkModel, LogRecord,
};
use crate::pnm::{ppm_bytes, read_pgm, read_ppm};
use crate::pointcloud::{export_ply, reconstruct_hologram_metric, PointCloud};
use crate::protocol::{
    point_at, take_snapshot, CallMode, EnvRep, Message, MessageBody, PeerId, PointerRay, RoomState,
    SelfRep, SnapshotId, SnapshotKind, StreamStatus, DEFAULT_ANNOTATION_DISTANCE_M, DEFAULT_MAX_PEERS,
};
use crate::scene::{Scene, SceneFrames};

const RETRANSMIT_LIMIT: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("line {line}: {message}")]
    Runtime { line: usize, message: String },
    #[error("{0}")]
    Setup(String),
}

fn script_err(line: usize, message: impl fmt::Display) -> SessionError {
    SessionError::Script { line, message: message.to_string() }
}

/// Where a peer's frames come from. Sources are single still frames.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synthetic(Scene),
    Files { color: String, depth: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerSpec {
    pub id: PeerId,
    pub name: String,
    /// Pose of the shared anchor in this peer's own world frame.
    pub anchor: Pose,
    pub k: Intrinsics,
    pub annotation_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Source { stream: Stream, source: Option<Source> },
    Join,
    Leave,
    Pose(Pose),
    SelfRep(SelfRep),
    EnvRep(EnvRep),
    Mode(CallMode),
    Snapshot(SnapshotKind),
    Point { u: f64, v: f64 },
    PointEnd,
    Anchor(Pose),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SelfView,
    Env,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEvent {
    pub line: usize,
    pub time_us: u64,
    pub peer: PeerId,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionScript {
    pub peers: Vec<PeerSpec>,
    pub events: Vec<ScriptEvent>,
    pub state_link: LinkModel,
    pub av_link: LinkModel,
    pub degradation: DegradationModel,
    pub degradation_seed: u64,
    pub fps: f64,
    pub end_us: u64,
    pub max_peers: usize,
}

impl Default for SessionScript {
    fn default() -> Self {
        Self {
            peers: Vec::new(),
            events: Vec::new(),
            state_link: LinkModel { base_latency_ms: 30.0, jitter_ms: 5.0, loss_prob: 0.0, seed: 1 },
            av_link: LinkModel { base_latency_ms: 100.0, jitter_ms: 20.0, loss_prob: 0.0, seed: 2 },
            degradation: DegradationModel::default(),
            degradation_seed: 3,
            fps: 30.0,
            end_us: 0,
            max_peers: DEFAULT_MAX_PEERS,
        }
    }
}

fn parse_pose(line: usize, text: &str) -> Result<Pose, SessionError> {
    if let Some([x, y, z]) = parse_floats::<3>(text) {
        return Ok(Pose::from_translation(x, y, z));
    }
    if let Some([x, y, z, qw, qx, qy, qz]) = parse_floats::<7>(text) {
        return Pose::from_components([x, y, z], [qw, qx, qy, qz]).map_err(|e| script_err(line, e));
    }
    Err(script_err(line, format!("expected x,y,z or x,y,z,qw,qx,qy,qz, got {text:?}")))
}

fn key_values(line: usize, args: &[&str]) -> Result<Config, SessionError> {
    let mut cfg = Config::default();
    for a in args {
        let (k, v) = a.split_once('=').ok_or_else(|| script_err(line, format!("expected key=value, got {a:?}")))?;
        cfg.set(k, v);
    }
    Ok(cfg)
}

fn parse_source(line: usize, text: &str) -> Result<Option<Source>, SessionError> {
    if text == "none" {
        return Ok(None);
    }
    if let Some(files) = text.strip_prefix("file:") {
        let (color, depth) = files
            .split_once(',')
            .ok_or_else(|| script_err(line, "file source needs file:<color.ppm>,<depth.pgm>"))?;
        return Ok(Some(Source::Files { color: color.to_string(), depth: depth.to_string() }));
    }
    text.parse::<Scene>().map(|s| Some(Source::Synthetic(s))).map_err(|e| script_err(line, e))
}

/// What validation tracks per peer while walking the script.
#[derive(Default)]
struct Shadow {
    joined: bool,
    has_pose: bool,
}

impl SessionScript {
    /// Parses and validates a script. `overrides` (already-parsed defaults
    /// such as link models from a config file) is used as the starting point.
    pub fn parse_with(text: &str, overrides: SessionScript) -> Result<Self, SessionError> {
        let mut s = overrides;
        let mut names: BTreeMap<String, PeerId> = BTreeMap::new();
        let mut room = RoomState::new(s.max_peers);
        let mut shadows: BTreeMap<PeerId, Shadow> = BTreeMap::new();
        let mut last_t = 0u64;
        let mut explicit_end = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = content.split_whitespace().collect();
            if tokens.len() < 3 {
                return Err(script_err(line, "expected <t_ms> <peer|-> <verb> [args]"));
            }
            let t_ms: f64 = tokens[0].parse().map_err(|_| script_err(line, format!("bad timestamp {:?}", tokens[0])))?;
            if !t_ms.is_finite() || t_ms < 0.0 {
                return Err(script_err(line, format!("bad timestamp {t_ms}")));
            }
            let t = (t_ms * 1000.0).round() as u64;
            if t < last_t {
                return Err(script_err(line, format!("timestamp {t_ms} ms goes backwards")));
            }
            last_t = t;
            let (who, verb, args) = (tokens[1], tokens[2], &tokens[3..]);

            if who == "-" {
                match verb {
                    "link" => {
                        let (which, rest) = args.split_first().ok_or_else(|| script_err(line, "link needs state|av"))?;
                        let cfg = key_values(line, rest)?;
                        let slot = match *which {
                            "state" => &mut s.state_link,
                            "av" => &mut s.av_link,
                            other => return Err(script_err(line, format!("unknown link {other:?}"))),
                        };
                        *slot = slot.with_config(&cfg).map_err(|e| script_err(line, e))?;
                    }
                    "degrade" => {
                        let cfg = key_values(line, args)?;
                        s.degradation = s.degradation.with_config(&cfg).map_err(|e| script_err(line, e))?;
                        s.degradation_seed = cfg.get_or("seed", s.degradation_seed).map_err(|e| script_err(line, e))?;
                    }
                    "fps" => {
                        let fps: f64 = args
                            .first()
                            .and_then(|a| a.parse().ok())
                            .filter(|f: &f64| f.is_finite() && *f > 0.0)
                            .ok_or_else(|| script_err(line, "fps needs a positive number"))?;
                        s.fps = fps;
                    }
                    "end" => explicit_end = Some(t),
                    other => return Err(script_err(line, format!("unknown session verb {other:?}"))),
                }
                continue;
            }

            if verb == "peer" {
                if names.contains_key(who) {
                    return Err(script_err(line, format!("peer {who:?} defined twice")));
                }
                let cfg = key_values(line, args)?;
                let anchor = match cfg.get_str("anchor") {
                    Some(a) => parse_pose(line, a)?,
                    None => Pose::identity(),
                };
                let hfov = cfg.get_or("hfov", 60.0).map_err(|e| script_err(line, e))?;
                let vfov = cfg.get_or("vfov", 45.0).map_err(|e| script_err(line, e))?;
                let (w, h) = match cfg.get_str("res") {
                    None => (160, 120),
                    Some(r) => r
                        .split_once('x')
                        .and_then(|(w, h)| Some((w.parse::<u32>().ok()?, h.parse::<u32>().ok()?)))
                        .ok_or_else(|| script_err(line, format!("bad resolution {r:?}")))?,
                };
                let limit = Packer::default();
                if w > limit.max_width || h > limit.max_height {
                    return Err(script_err(line, format!("resolution {w}x{h} exceeds {}x{}", limit.max_width, limit.max_height)));
                }
                let k = intrinsics_from_fov(hfov, vfov, w, h).map_err(|e| script_err(line, e))?;
                let annotation_distance = cfg.get_or("annot", DEFAULT_ANNOTATION_DISTANCE_M).map_err(|e| script_err(line, e))?;
                if !(annotation_distance > 0.0) {
                    return Err(script_err(line, "annotation distance must be positive"));
                }
                let id = PeerId(s.peers.len() as u32 + 1);
                names.insert(who.to_string(), id);
                shadows.insert(id, Shadow::default());
                s.peers.push(PeerSpec { id, name: who.to_string(), anchor, k, annotation_distance });
                continue;
            }

            let peer = *names.get(who).ok_or_else(|| script_err(line, format!("peer {who:?} is not defined")))?;
            let shadow = shadows.get_mut(&peer).expect("every defined peer has a shadow");
            let one = |what: &str| -> Result<&str, SessionError> {
                match args {
                    [a] => Ok(a),
                    _ => Err(script_err(line, format!("{verb} expects one {what}"))),
                }
            };
            let action = match verb {
                "source" => {
                    let (stream, rest) = match args {
                        ["self", rest] => (Stream::SelfView, rest),
                        ["env", rest] => (Stream::Env, rest),
                        _ => return Err(script_err(line, "source expects self|env <scene|file:...|none>")),
                    };
                    Action::Source { stream, source: parse_source(line, rest)? }
                }
                "join" => Action::Join,
                "leave" => Action::Leave,
                "pose" => Action::Pose(parse_pose(line, one("pose")?)?),
                "anchor" => Action::Anchor(parse_pose(line, one("pose")?)?),
                "selfrep" => Action::SelfRep(match one("mode")? {
                    "hologram3d" => SelfRep::Hologram3D,
                    "spatial-video" => SelfRep::SpatialVideo,
                    "spatial-video-nobg" => SelfRep::SpatialVideoNoBackground,
                    "off" => SelfRep::Off,
                    m => return Err(script_err(line, format!("unknown self representation {m:?}"))),
                }),
                "envrep" => Action::EnvRep(match one("mode")? {
                    "hologram" => EnvRep::Hologram,
                    "video" => EnvRep::VideoFeed,
                    "off" => EnvRep::Off,
                    m => return Err(script_err(line, format!("unknown environment representation {m:?}"))),
                }),
                "mode" => Action::Mode(match one("mode")? {
                    "ar" => CallMode::Ar,
                    "screen" => CallMode::Screen,
                    m => return Err(script_err(line, format!("unknown call mode {m:?}"))),
                }),
                "snapshot" => Action::Snapshot(match one("kind")? {
                    "video" => SnapshotKind::VideoFrame,
                    "hologram" => SnapshotKind::Hologram,
                    m => return Err(script_err(line, format!("unknown snapshot kind {m:?}"))),
                }),
                "point" => {
                    let [u, v] = args else { return Err(script_err(line, "point expects <u> <v>")) };
                    let (u, v) = (u.parse::<f64>(), v.parse::<f64>());
                    let (Ok(u), Ok(v)) = (u, v) else { return Err(script_err(line, "point expects numeric pixel coordinates")) };
                    let k = &s.peers[peer.0 as usize - 1].k;
                    if !k.contains(u, v) {
                        return Err(script_err(line, format!("pixel ({u}, {v}) outside {}x{}", k.width, k.height)));
                    }
                    Action::Point { u, v }
                }
                "point-end" => Action::PointEnd,
                other => return Err(script_err(line, format!("unknown verb {other:?}"))),
            };

            // Membership rules are checked against a shadow room.
            match &action {
                Action::Join => {
                    room.apply_mut(&Message::new(peer, 0, MessageBody::Join { peer })).map_err(|e| script_err(line, e))?;
                    shadow.joined = true;
                }
                Action::Leave => {
                    if !shadow.joined {
                        return Err(script_err(line, format!("{who} leaves without joining")));
                    }
                    room.apply_mut(&Message::new(peer, 0, MessageBody::Leave { peer })).map_err(|e| script_err(line, e))?;
                    shadow.joined = false;
                }
                Action::Source { .. } => {}
                Action::Pose(_) => {
                    shadow.has_pose = true;
                    if !shadow.joined {
                        return Err(script_err(line, format!("{who} is not in the room")));
                    }
                }
                _ if !shadow.joined => return Err(script_err(line, format!("{who} is not in the room"))),
                Action::Point { .. } | Action::Snapshot(_) if !shadow.has_pose => {
                    return Err(script_err(line, format!("{who} has no pose yet")));
                }
                _ => {}
            }
            s.events.push(ScriptEvent { line, time_us: t, peer, action });
        }
        s.end_us = explicit_end.unwrap_or(last_t);
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self, SessionError> {
        Self::parse_with(text, Self::default())
    }
}

/// Final metrics. Rendered as `key=value` lines; every value is derived
/// from the event log and the replica digests, see [`MetricsReport::from_log`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub peers: usize,
    pub duration_ms: f64,
    pub composites: u64,
    pub composite_fps: f64,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_dropped: u64,
    pub state_sent: u64,
    pub state_delivered: u64,
    pub state_retransmissions: u64,
    pub latency_ms: Option<LatencyStats>,
    pub self_depth_rmse_m: Option<f64>,
    pub env_depth_rmse_m: Option<f64>,
    pub cloud_rmse_m: Option<f64>,
    pub consistency_max_dev_m: Option<f64>,
    pub replicas_converged: bool,
    pub room_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub min: f64,
    pub mean: f64,
    pub p95: f64,
    pub max: f64,
}

impl LatencyStats {
    /// Nearest-rank percentile.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = ((0.95 * s.len() as f64).ceil() as usize).clamp(1, s.len());
        Some(Self {
            min: s[0],
            mean: s.iter().sum::<f64>() / s.len() as f64,
            p95: s[rank - 1],
            max: s[s.len() - 1],
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.9}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "peers={}", self.peers)?;
        writeln!(f, "duration_ms={:.3}", self.duration_ms)?;
        writeln!(f, "composites={}", self.composites)?;
        writeln!(f, "composite_fps={:.3}", self.composite_fps)?;
        writeln!(f, "frames_sent={}", self.frames_sent)?;
        writeln!(f, "frames_delivered={}", self.frames_delivered)?;
        writeln!(f, "frames_dropped={}", self.frames_dropped)?;
        writeln!(f, "state_sent={}", self.state_sent)?;
        writeln!(f, "state_delivered={}", self.state_delivered)?;
        writeln!(f, "state_retransmissions={}", self.state_retransmissions)?;
        match &self.latency_ms {
            Some(l) => {
                writeln!(f, "latency_ms_min={:.3}", l.min)?;
                writeln!(f, "latency_ms_mean={:.3}", l.mean)?;
                writeln!(f, "latency_ms_p95={:.3}", l.p95)?;
                writeln!(f, "latency_ms_max={:.3}", l.max)?;
            }
            None => writeln!(f, "latency_ms=n/a")?,
        }
        writeln!(f, "self_depth_rmse_m={}", opt(self.self_depth_rmse_m))?;
        writeln!(f, "env_depth_rmse_m={}", opt(self.env_depth_rmse_m))?;
        writeln!(f, "cloud_rmse_m={}", opt(self.cloud_rmse_m))?;
        writeln!(f, "consistency_max_dev_m={}", opt(self.consistency_max_dev_m))?;
        writeln!(f, "replicas_converged={}", self.replicas_converged)?;
        writeln!(f, "room_digest={}", self.room_digest)
    }
}

fn field<T: std::str::FromStr>(r: &LogRecord, key: &str) -> Result<T, String> {
    let v = r.field(key).ok_or_else(|| format!("record {:?} lacks {key}", r.id))?;
    v.parse().map_err(|_| format!("record {:?}: bad {key} {v:?}", r.id))
}

impl MetricsReport {
    /// Rebuilds the report from the event log and `state_digest.txt` lines.
    pub fn from_log(records: &[LogRecord], digest_lines: &str) -> Result<Self, String> {
        let digests: Vec<&str> = digest_lines.lines().filter_map(|l| l.split_whitespace().nth(1)).collect();
        let replicas_converged = !digests.is_empty() && digests.windows(2).all(|w| w[0] == w[1]);
        let room_digest = digests.first().map_or_else(String::new, |d| d.to_string());

        let mut r = MetricsReport {
            peers: 0,
            duration_ms: 0.0,
            composites: 0,
            composite_fps: 0.0,
            frames_sent: 0,
            frames_delivered: 0,
            frames_dropped: 0,
            state_sent: 0,
            state_delivered: 0,
            state_retransmissions: 0,
            latency_ms: None,
            self_depth_rmse_m: None,
            env_depth_rmse_m: None,
            cloud_rmse_m: None,
            consistency_max_dev_m: None,
            replicas_converged,
            room_digest,
        };
        let mut latencies = Vec::new();
        let mut sums = [(0.0f64, 0u64); 3];
        let mut senders = 0u64;
        for rec in records {
            match (rec.channel, rec.event) {
                (Channel::Av, EventKind::Send) => r.frames_sent += 1,
                (Channel::Av, EventKind::Drop) => r.frames_dropped += 1,
                (Channel::Av, EventKind::Deliver) => {
                    r.frames_delivered += 1;
                    let sent: u64 = field(rec, "sent_us")?;
                    latencies.push((rec.time_us - sent) as f64 / 1000.0);
                    for (i, key) in ["self", "env", "cloud"].iter().enumerate() {
                        sums[i].0 += field::<f64>(rec, &format!("{key}_sse"))?;
                        sums[i].1 += field::<u64>(rec, &format!("{key}_n"))?;
                    }
                }
                (Channel::State, EventKind::Send) => {
                    r.state_sent += 1;
                    r.state_retransmissions += field::<u64>(rec, "attempts")?.saturating_sub(1);
                }
                (Channel::State, EventKind::Deliver) => r.state_delivered += 1,
                (Channel::State, EventKind::Drop) => {}
                (Channel::Session, EventKind::Summary) => {
                    r.peers = field(rec, "peers")?;
                    r.composites = field(rec, "composites")?;
                    senders = field(rec, "senders")?;
                    r.duration_ms = field::<u64>(rec, "duration_us")? as f64 / 1000.0;
                    r.consistency_max_dev_m = match rec.field("consistency_max_dev_m") {
                        Some("n/a") | None => None,
                        Some(_) => Some(field(rec, "consistency_max_dev_m")?),
                    };
                }
                (Channel::Session, _) | (_, EventKind::Summary) => {}
            }
        }
        r.latency_ms = LatencyStats::from_samples(&latencies);
        let rmse = |(sse, n): (f64, u64)| (n > 0).then(|| (sse / n as f64).sqrt());
        r.self_depth_rmse_m = rmse(sums[0]);
        r.env_depth_rmse_m = rmse(sums[1]);
        r.cloud_rmse_m = rmse(sums[2]);
        if senders > 0 && r.duration_ms > 0.0 {
            r.composite_fps = r.composites as f64 / senders as f64 / (r.duration_ms / 1000.0);
        }
        Ok(r)
    }
}

/// Everything a simulation produced.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub report: MetricsReport,
    pub events: Vec<LogRecord>,
    /// One `name digest` line per peer.
    pub digest_lines: String,
    pub replicas: BTreeMap<PeerId, RoomState>,
    /// Snapshot artifacts (`.ply` for holograms, `.ppm` for video frames).
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub snapshot_clouds: BTreeMap<SnapshotId, PointCloud>,
    /// Shared points as each peer sees them, in that peer's own world frame.
    pub probes: BTreeMap<PeerId, Vec<(String, Vec3)>>,
    /// Wall-clock pipeline cost (sender plus receiver side) per delivered
    /// frame. Not part of the deterministic output.
    pub processing: Vec<Duration>,
}

impl SessionOutcome {
    pub fn events_text(&self) -> String {
        self.events.iter().map(|r| format!("{r}\n")).collect()
    }
}

#[derive(Debug)]
enum Event {
    Script(usize),
    Tick(PeerId),
    State { to: PeerId, msg: Message, id: String, size: usize, sent_us: u64 },
    Av { to: PeerId, from: PeerId, bytes: Arc<Vec<u8>>, id: String, sent_us: u64, send_cost: Duration },
}

struct LocalFrames {
    self_view: Option<SceneFrames>,
    env: Option<SceneFrames>,
}

struct PeerRuntime {
    spec: PeerSpec,
    anchor: AnchorFrame,
    replica: RoomState,
    seq: u64,
    frame_seq: u64,
    snapshot_counter: u32,
    device_pose_local: Option<Pose>,
    pointer: Option<PointerRay>,
    frames: LocalFrames,
    ticking: bool,
    latest: Option<(StreamStatus, Arc<Vec<u8>>)>,
    /// Per sender: composite seq and camera-frame centroid of its decoded
    /// environment hologram.
    env_centroids: BTreeMap<PeerId, (u64, Vec3)>,
}

struct Codec {
    self_lut: ColorLut,
    env_lut: ColorLut,
    packer: Packer,
}

/// Seed for one directed link, mixed so that links are independent.
fn link_seed(base: u64, run_seed: u64, from: PeerId, to: PeerId, channel: u64) -> u64 {
    let mut z = base ^ run_seed.rotate_left(17) ^ ((from.0 as u64) << 40) ^ ((to.0 as u64) << 20) ^ channel;
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn load_source(source: &Option<Source>, k: &Intrinsics, base_dir: &Path, line: usize) -> Result<Option<SceneFrames>, SessionError> {
    let Some(source) = source else { return Ok(None) };
    let frames = match source {
        Source::Synthetic(scene) => scene.render(k),
        Source::Files { color, depth } => {
            let runtime = |m: String| SessionError::Runtime { line, message: m };
            let color = read_ppm(&base_dir.join(color)).map_err(|e| runtime(e.to_string()))?;
            let depth = read_pgm(&base_dir.join(depth)).map_err(|e| runtime(e.to_string()))?;
            if (color.width, color.height) != (k.width, k.height) || (depth.width, depth.height) != (k.width, k.height) {
                return Err(runtime(format!("source frames must be {}x{}", k.width, k.height)));
            }
            SceneFrames { color, depth }
        }
    };
    Ok(Some(frames))
}

#[derive(Default)]
struct StreamError {
    depth_sse: f64,
    depth_n: u64,
    cloud_sse: f64,
    cloud_n: u64,
}

/// Compares a decoded stream with the frames it was made from. The cloud
/// error is measured in the camera frame; a rigid placement does not change it.
fn stream_error(decoded: &MetricDepth, truth: &DepthFrame, k: &Intrinsics) -> StreamError {
    let mut e = StreamError::default();
    let w = k.width as usize;
    for (i, (d, &t)) in decoded.meters.iter().zip(&truth.samples).enumerate() {
        let (Some(d), true) = (d, t > 0) else { continue };
        let t = t as f64 / 1000.0;
        e.depth_sse += (d - t) * (d - t);
        e.depth_n += 1;
        let (u, v) = ((i % w) as f64, (i / w) as f64);
        let ray = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        e.cloud_sse += (ray * (d - t)).norm_squared();
        e.cloud_n += 1;
    }
    e
}

fn centroid(c: &PointCloud) -> Option<Vec3> {
    (!c.is_empty()).then(|| c.points.iter().map(|p| p.position).sum::<Vec3>() / c.len() as f64)
}

struct Sim<'a> {
    script: &'a SessionScript,
    seed: u64,
    codec: Codec,
    peers: BTreeMap<PeerId, PeerRuntime>,
    links: BTreeMap<(PeerId, PeerId, u8), Link>,
    queue: EventQueue<Event>,
    log: Vec<LogRecord>,
    artifacts: Vec<(String, Vec<u8>)>,
    snapshot_clouds: BTreeMap<SnapshotId, PointCloud>,
    processing: Vec<Duration>,
    composites: u64,
    senders: std::collections::BTreeSet<PeerId>,
    base_dir: &'a Path,
}

impl Sim<'_> {
    fn frame_interval_us(&self) -> u64 {
        (1e6 / self.script.fps).round().max(1.0) as u64
    }

    fn link(&mut self, from: PeerId, to: PeerId, channel: Channel) -> &mut Link {
        let (model, tag) = match channel {
            Channel::State => (self.script.state_link, 0u8),
            _ => (self.script.av_link, 1u8),
        };
        let seed = self.seed;
        self.links.entry((from, to, tag)).or_insert_with(|| {
            Link::new(LinkModel { seed: link_seed(model.seed, seed, from, to, tag as u64), ..model })
        })
    }

    fn runtime_err(line: usize, e: impl fmt::Display) -> SessionError {
        SessionError::Runtime { line, message: e.to_string() }
    }

    fn broadcast(&mut self, now: u64, sender: PeerId, body: MessageBody, line: usize) -> Result<(), SessionError> {
        let p = self.peers.get_mut(&sender).expect("known peer");
        p.seq += 1;
        let msg = Message::new(sender, p.seq, body);
        p.replica.apply_mut(&msg).map_err(|e| Self::runtime_err(line, e))?;
        let size = crate::protocol::encode_message(&msg).len();
        let m = self.script.state_link;
        let rto = ((2.0 * (m.base_latency_ms + m.jitter_ms)).max(1.0) * 1000.0).round() as u64;
        let targets: Vec<PeerId> = self.peers.keys().copied().filter(|&id| id != sender).collect();
        for to in targets {
            let id = format!("m{}.{}>{}", sender.0, msg.seq, to.0);
            match self.link(sender, to, Channel::State).schedule_reliable(now, rto, RETRANSMIT_LIMIT) {
                Ok(Some((at, attempts))) => {
                    self.log.push(LogRecord {
                        time_us: now,
                        channel: Channel::State,
                        event: EventKind::Send,
                        size,
                        id: id.clone(),
                        fields: vec![("attempts".into(), attempts.to_string())],
                    });
                    self.queue.push(at, Event::State { to, msg: msg.clone(), id, size, sent_us: now });
                }
                Ok(None) => {
                    let fields = vec![("attempts".into(), RETRANSMIT_LIMIT.to_string())];
                    self.log.push(LogRecord { time_us: now, channel: Channel::State, event: EventKind::Send, size, id: id.clone(), fields });
                    self.log.push(LogRecord { time_us: now, channel: Channel::State, event: EventKind::Drop, size, id, fields: vec![] });
                }
                Err(e) => return Err(Self::runtime_err(line, e)),
            }
        }
        Ok(())
    }

    fn anchor_rel_pose(p: &PeerRuntime) -> Option<Pose> {
        p.device_pose_local.map(|d| to_anchor_frame(&d, &p.anchor))
    }

    fn script_action(&mut self, now: u64, idx: usize) -> Result<(), SessionError> {
        let ev = &self.script.events[idx];
        let (line, peer) = (ev.line, ev.peer);
        let action = ev.action.clone();
        match action {
            Action::Source { stream, source } => {
                let p = self.peers.get_mut(&peer).expect("known peer");
                let frames = load_source(&source, &p.spec.k, self.base_dir, line)?;
                match stream {
                    Stream::SelfView => p.frames.self_view = frames,
                    Stream::Env => p.frames.env = frames,
                }
            }
            Action::Join => {
                self.broadcast(now, peer, MessageBody::Join { peer }, line)?;
                if let Some(pose) = Self::anchor_rel_pose(&self.peers[&peer]) {
                    self.broadcast(now, peer, MessageBody::PoseUpdate { peer, pose, timestamp_us: now }, line)?;
                }
                let p = self.peers.get_mut(&peer).expect("known peer");
                if !p.ticking {
                    p.ticking = true;
                    self.queue.push(now, Event::Tick(peer));
                }
            }
            Action::Leave => self.broadcast(now, peer, MessageBody::Leave { peer }, line)?,
            Action::Pose(device) => {
                let p = self.peers.get_mut(&peer).expect("known peer");
                p.device_pose_local = Some(device);
                let pose = to_anchor_frame(&device, &p.anchor);
                self.broadcast(now, peer, MessageBody::PoseUpdate { peer, pose, timestamp_us: now }, line)?;
            }
            Action::Anchor(anchor) => {
                let p = self.peers.get_mut(&peer).expect("known peer");
                p.anchor = AnchorFrame::new(anchor);
                self.broadcast(now, peer, MessageBody::AnchorRepositioned { peer }, line)?;
                if let Some(pose) = Self::anchor_rel_pose(&self.peers[&peer]) {
                    self.broadcast(now, peer, MessageBody::PoseUpdate { peer, pose, timestamp_us: now }, line)?;
                }
            }
            Action::SelfRep(mode) => self.broadcast(now, peer, MessageBody::SelfRepChange { peer, mode }, line)?,
            Action::EnvRep(mode) => self.broadcast(now, peer, MessageBody::EnvRepChange { peer, mode }, line)?,
            Action::Mode(mode) => self.broadcast(now, peer, MessageBody::ModeSwitch { peer, mode }, line)?,
            Action::Point { u, v } => {
                let p = &self.peers[&peer];
                let pose = Self::anchor_rel_pose(p).ok_or_else(|| Self::runtime_err(line, "no pose"))?;
                let body = point_at(peer, u, v, &p.spec.k, &pose).map_err(|e| Self::runtime_err(line, e))?;
                if let MessageBody::Pointer { ray, .. } = &body {
                    self.peers.get_mut(&peer).expect("known peer").pointer = Some(*ray);
                }
                self.broadcast(now, peer, body, line)?;
            }
            Action::PointEnd => {
                let p = self.peers.get_mut(&peer).expect("known peer");
                if let Some(ray) = p.pointer.take() {
                    self.broadcast(now, peer, MessageBody::Pointer { peer, ray, active: false }, line)?;
                }
            }
            Action::Snapshot(kind) => self.snapshot(now, peer, kind, line)?,
        }
        Ok(())
    }

    fn snapshot(&mut self, now: u64, peer: PeerId, kind: SnapshotKind, line: usize) -> Result<(), SessionError> {
        let p = self.peers.get_mut(&peer).expect("known peer");
        let pose = Self::anchor_rel_pose(p).ok_or_else(|| Self::runtime_err(line, "no pose"))?;
        p.snapshot_counter += 1;
        let id = SnapshotId::new(peer, p.snapshot_counter);
        let status = p.latest.as_ref().map(|(s, _)| *s);
        let body = take_snapshot(peer, id, kind, status.as_ref(), &pose, &p.spec.k, p.spec.annotation_distance)
            .map_err(|e| Self::runtime_err(line, e))?;
        let bytes = p.latest.as_ref().map(|(_, b)| Arc::clone(b)).expect("status implies bytes");
        let k = p.spec.k;
        let parts = CompositeFrame::parse(&bytes).and_then(|f| unpack(&f)).map_err(|e| Self::runtime_err(line, e))?;
        let color = parts.frames.env_color.as_ref().expect("snapshot checked the color quadrant");
        match kind {
            SnapshotKind::VideoFrame => self.artifacts.push((format!("snapshot_{id}.ppm"), ppm_bytes(color))),
            SnapshotKind::Hologram => {
                let depth = parts.frames.env_depth.as_ref().expect("snapshot checked the depth quadrant");
                let metric = decode_depth_metric(depth, &self.codec.env_lut);
                let cloud = reconstruct_hologram_metric(color, &metric, &k, &pose).map_err(|e| Self::runtime_err(line, e))?;
                self.artifacts.push((format!("snapshot_{id}.ply"), export_ply(&cloud)));
                self.snapshot_clouds.insert(id, cloud);
            }
        }
        self.broadcast(now, peer, body, line)
    }

    fn tick(&mut self, now: u64, peer: PeerId) -> Result<(), SessionError> {
        let interval = self.frame_interval_us();
        let p = self.peers.get_mut(&peer).expect("known peer");
        let Some(me) = p.replica.peers.get(&peer).cloned() else {
            p.ticking = false;
            return Ok(());
        };
        let started = Instant::now();
        let mut frames = QuadrantFrames::default();
        if let Some(f) = &p.frames.self_view {
            if me.self_rep != SelfRep::Off {
                frames.self_color = Some(f.color.clone());
            }
            if matches!(me.self_rep, SelfRep::Hologram3D | SelfRep::SpatialVideoNoBackground) {
                frames.self_depth = Some(encode_depth(&f.depth, &self.codec.self_lut));
            }
        }
        if let Some(f) = &p.frames.env {
            if me.env_rep != EnvRep::Off {
                frames.env_color = Some(f.color.clone());
            }
            if me.env_rep == EnvRep::Hologram {
                frames.env_depth = Some(encode_depth(&f.depth, &self.codec.env_lut));
            }
        }
        let any = Quadrant::ALL.iter().any(|q| frames.get(*q).is_some());
        if any {
            p.frame_seq += 1;
            let seq = p.frame_seq;
            let packed = self.codec.packer.pack(&frames, now, seq).map_err(|e| Self::runtime_err(0, e))?;
            let noise_seed = link_seed(self.script.degradation_seed, self.seed, peer, peer, seq);
            let frame = degrade(&packed, &self.script.degradation, noise_seed);
            let bytes = Arc::new(frame.serialize());
            let send_cost = started.elapsed();
            p.latest = Some((StreamStatus::from_composite(peer, &frame), Arc::clone(&bytes)));
            // Loopback: the sender reconstructs its own stream the way receivers will.
            if let Some(c) = env_centroid(&frame, &self.codec.env_lut, &p.spec.k) {
                p.env_centroids.insert(peer, (seq, c));
            }
            let receivers: Vec<PeerId> = p.replica.peers.keys().copied().filter(|&id| id != peer).collect();
            self.composites += 1;
            self.senders.insert(peer);
            for to in receivers {
                let id = format!("f{}.{}>{}", peer.0, seq, to.0);
                let size = bytes.len();
                let delivery = self.link(peer, to, Channel::Av).schedule(now).map_err(|e| Self::runtime_err(0, e))?;
                self.log.push(LogRecord { time_us: now, channel: Channel::Av, event: EventKind::Send, size, id: id.clone(), fields: vec![] });
                match delivery {
                    crate::netsim::Delivery::At(at) => {
                        self.queue.push(at, Event::Av { to, from: peer, bytes: Arc::clone(&bytes), id, sent_us: now, send_cost });
                    }
                    crate::netsim::Delivery::Dropped => {
                        self.log.push(LogRecord { time_us: now, channel: Channel::Av, event: EventKind::Drop, size, id, fields: vec![] });
                    }
                }
            }
        }
        let next = now + interval;
        if next <= self.script.end_us {
            self.queue.push(next, Event::Tick(peer));
        } else {
            self.peers.get_mut(&peer).expect("known peer").ticking = false;
        }
        Ok(())
    }

    fn receive_av(&mut self, now: u64, to: PeerId, from: PeerId, bytes: &[u8], id: String, sent_us: u64, send_cost: Duration) {
        let started = Instant::now();
        let size = bytes.len();
        let sender_k = self.peers[&from].spec.k;
        let (self_truth, env_truth) = {
            let f = &self.peers[&from].frames;
            (f.self_view.as_ref().map(|s| s.depth.clone()), f.env.as_ref().map(|s| s.depth.clone()))
        };
        let mut errs = [StreamError::default(), StreamError::default()];
        let mut env_c = None;
        match CompositeFrame::parse(bytes).and_then(|f| unpack(&f).map(|u| (f, u))) {
            Ok((frame, parts)) => {
                if let (Some(d), Some(t)) = (&parts.frames.self_depth, &self_truth) {
                    errs[0] = stream_error(&decode_depth_metric(d, &self.codec.self_lut), t, &sender_k);
                }
                if let (Some(d), Some(t)) = (&parts.frames.env_depth, &env_truth) {
                    errs[1] = stream_error(&decode_depth_metric(d, &self.codec.env_lut), t, &sender_k);
                }
                env_c = env_centroid(&frame, &self.codec.env_lut, &sender_k).map(|c| (frame.seq, c));
            }
            Err(e) => log::warn!("{id}: undecodable composite: {e}"),
        }
        if let Some(c) = env_c {
            self.peers.get_mut(&to).expect("known peer").env_centroids.insert(from, c);
        }
        self.processing.push(send_cost + started.elapsed());
        let cloud = StreamError {
            cloud_sse: errs[0].cloud_sse + errs[1].cloud_sse,
            cloud_n: errs[0].cloud_n + errs[1].cloud_n,
            ..Default::default()
        };
        let fields = vec![
            ("sent_us".to_string(), sent_us.to_string()),
            ("self_sse".to_string(), errs[0].depth_sse.to_string()),
            ("self_n".to_string(), errs[0].depth_n.to_string()),
            ("env_sse".to_string(), errs[1].depth_sse.to_string()),
            ("env_n".to_string(), errs[1].depth_n.to_string()),
            ("cloud_sse".to_string(), cloud.cloud_sse.to_string()),
            ("cloud_n".to_string(), cloud.cloud_n.to_string()),
        ];
        self.log.push(LogRecord { time_us: now, channel: Channel::Av, event: EventKind::Deliver, size, id, fields });
    }

    fn receive_state(&mut self, now: u64, to: PeerId, msg: &Message, id: String, size: usize, sent_us: u64) {
        let replica = &mut self.peers.get_mut(&to).expect("known peer").replica;
        if let Err(e) = replica.apply_mut(msg) {
            log::warn!("{id}: rejected by replica: {e}");
        }
        let fields = vec![("sent_us".to_string(), sent_us.to_string())];
        self.log.push(LogRecord { time_us: now, channel: Channel::State, event: EventKind::Deliver, size, id, fields });
    }

    /// Shared points per peer, in that peer's world frame: every member's
    /// device position and the centroid of its environment hologram.
    fn probes(&self) -> BTreeMap<PeerId, Vec<(String, Vec3)>> {
        let mut out = BTreeMap::new();
        for (&id, p) in &self.peers {
            let mut pts = Vec::new();
            for (&member, state) in &p.replica.peers {
                let Some(pose) = state.pose else { continue };
                let local = from_anchor_frame(&pose, &p.anchor);
                pts.push((format!("device{}", member.0), local.translation));
                if let Some((seq, c)) = p.env_centroids.get(&member) {
                    pts.push((format!("env{}@{}", member.0, seq), local.transform_point(c)));
                }
            }
            out.insert(id, pts);
        }
        out
    }
}

fn env_centroid(frame: &CompositeFrame, lut: &ColorLut, k: &Intrinsics) -> Option<Vec3> {
    let parts = unpack(frame).ok()?;
    let (color, depth) = (parts.frames.env_color.as_ref()?, parts.frames.env_depth.as_ref()?);
    let metric = decode_depth_metric(depth, lut);
    centroid(&reconstruct_hologram_metric(color, &metric, k, &Pose::identity()).ok()?)
}

/// Largest disagreement between peers about the distance between two shared
/// points. `None` when peers do not hold the same set of points.
pub fn consistency_deviation(probes: &BTreeMap<PeerId, Vec<(String, Vec3)>>) -> Option<f64> {
    let mut views = probes.values();
    let first = views.next()?;
    let names: Vec<&String> = first.iter().map(|(n, _)| n).collect();
    if names.len() < 2 {
        return None;
    }
    let dists = |pts: &Vec<(String, Vec3)>| -> Vec<f64> {
        let mut d = Vec::new();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                d.push((pts[i].1 - pts[j].1).norm());
            }
        }
        d
    };
    let reference = dists(first);
    let mut worst = 0.0f64;
    for v in probes.values() {
        if v.iter().map(|(n, _)| n).collect::<Vec<_>>() != names {
            return None;
        }
        for (a, b) in reference.iter().zip(dists(v)) {
            worst = worst.max((a - b).abs());
        }
    }
    Some(worst)
}

/// Runs a parsed script. `seed` perturbs every random stream of the run;
/// file sources resolve against `base_dir`.
pub fn simulate(script: &SessionScript, seed: u64, base_dir: &Path) -> Result<SessionOutcome, SessionError> {
    let setup = |e: crate::depthcodec::CodecError| SessionError::Setup(e.to_string());
    let codec = Codec {
        self_lut: build_lut(&ColorizationParams::self_profile()).map_err(setup)?,
        env_lut: build_lut(&ColorizationParams::env_profile()).map_err(setup)?,
        packer: Packer::default(),
    };
    let peers = script
        .peers
        .iter()
        .map(|spec| {
            let rt = PeerRuntime {
                spec: spec.clone(),
                anchor: AnchorFrame::new(spec.anchor),
                replica: RoomState::new(script.max_peers),
                seq: 0,
                frame_seq: 0,
                snapshot_counter: 0,
                device_pose_local: None,
                pointer: None,
                frames: LocalFrames { self_view: None, env: None },
                ticking: false,
                latest: None,
                env_centroids: BTreeMap::new(),
            };
            (spec.id, rt)
        })
        .collect();
    let mut sim = Sim {
        script,
        seed,
        codec,
        peers,
        links: BTreeMap::new(),
        queue: EventQueue::default(),
        log: Vec::new(),
        artifacts: Vec::new(),
        snapshot_clouds: BTreeMap::new(),
        processing: Vec::new(),
        composites: 0,
        senders: Default::default(),
        base_dir,
    };
    for (i, ev) in script.events.iter().enumerate() {
        sim.queue.push(ev.time_us, Event::Script(i));
    }
    while let Some((now, ev)) = sim.queue.pop() {
        match ev {
            Event::Script(i) => sim.script_action(now, i)?,
            Event::Tick(peer) => sim.tick(now, peer)?,
            Event::State { to, msg, id, size, sent_us } => sim.receive_state(now, to, &msg, id, size, sent_us),
            Event::Av { to, from, bytes, id, sent_us, send_cost } => {
                sim.receive_av(now, to, from, &bytes, id, sent_us, send_cost)
            }
        }
    }

    let probes = sim.probes();
    let consistency = consistency_deviation(&probes);
    let end_time = sim.log.last().map_or(0, |r| r.time_us).max(script.end_us);
    sim.log.push(LogRecord {
        time_us: end_time,
        channel: Channel::Session,
        event: EventKind::Summary,
        size: 0,
        id: "end".into(),
        fields: vec![
            ("peers".into(), script.peers.len().to_string()),
            ("senders".into(), sim.senders.len().to_string()),
            ("composites".into(), sim.composites.to_string()),
            ("duration_us".into(), script.end_us.to_string()),
            ("consistency_max_dev_m".into(), consistency.map_or_else(|| "n/a".into(), |c| c.to_string())),
        ],
    });
    let replicas: BTreeMap<PeerId, RoomState> = sim.peers.iter().map(|(id, p)| (*id, p.replica.clone())).collect();
    let digest_lines: String =
        sim.peers.values().map(|p| format!("{} {}\n", p.spec.name, p.replica.digest())).collect();
    let report = MetricsReport::from_log(&sim.log, &digest_lines).map_err(SessionError::Setup)?;
    Ok(SessionOutcome {
        report,
        events: sim.log,
        digest_lines,
        replicas,
        artifacts: sim.artifacts,
        snapshot_clouds: sim.snapshot_clouds,
        probes,
        processing: sim.processing,
    })
}

/// Reads an event log back into records.
pub fn parse_events(text: &str) -> Result<Vec<LogRecord>, String> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

/// Mean environment depth RMSE per noise level: the scene is encoded,
/// packed, degraded with Gaussian noise of each `sigma` and decoded, once per
/// seed. Pixels that decode as missing are left out of the RMSE.
pub fn degradation_study(scene: &Scene, k: &Intrinsics, sigmas: &[f64], seeds: &[u64]) -> Result<Vec<(f64, f64)>, SessionError> {
    let setup = |e: String| SessionError::Setup(e);
    let lut = build_lut(&ColorizationParams::env_profile()).map_err(|e| setup(e.to_string()))?;
    let truth = scene.render(k);
    let frames = QuadrantFrames {
        env_color: Some(truth.color.clone()),
        env_depth: Some(encode_depth(&truth.depth, &lut)),
        ..Default::default()
    };
    let packed = Packer::default().pack(&frames, 0, 0).map_err(|e| setup(e.to_string()))?;
    let mut out = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let model = DegradationModel { noise_sigma: sigma, ..Default::default() };
        model.validate().map_err(|e| setup(e.to_string()))?;
        let mut total = 0.0;
        for &seed in seeds {
            let parts = unpack(&degrade(&packed, &model, seed)).map_err(|e| setup(e.to_string()))?;
            let depth = parts.frames.env_depth.as_ref().expect("packed above");
            let e = stream_error(&decode_depth_metric(depth, &lut), &truth.depth, k);
            total += if e.depth_n > 0 { (e.depth_sse / e.depth_n as f64).sqrt() } else { f64::NAN };
        }
        out.push((sigma, total / seeds.len() as f64));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depthcodec::quantization_bound;
    use crate::protocol::ProtocolError;

    const TWO_PEERS: &str = "\
# two peers on a clean link
0 - link av base_ms=100 jitter_ms=0 loss=0
0 - fps 10
0 alice peer anchor=1,0,0 res=32x24
0 bob peer anchor=0,0,2,0.7071067811865476,0,0.7071067811865476,0 res=32x24
0 alice source env flatwall:1.5
0 bob source env ramp
0 alice join
0 bob join
10 alice pose 1,0,1.2
10 bob pose 0.5,0,2
500 - end
";

    #[test]
    fn parse_reports_line_numbers() {
        let err = SessionScript::parse("0 a peer\n0 a join\n5 b join\n").unwrap_err();
        assert_eq!(err, script_err(3, "peer \"b\" is not defined"));
        let err = SessionScript::parse("10 a peer\n5 a join\n").unwrap_err();
        assert!(matches!(err, SessionError::Script { line: 2, .. }));
        let err = SessionScript::parse("0 a peer\n0 a wave\n").unwrap_err();
        assert!(matches!(err, SessionError::Script { line: 2, .. }));
        let err = SessionScript::parse("0 a peer\n0 a pose 1,2\n").unwrap_err();
        assert!(matches!(err, SessionError::Script { line: 2, .. }));
        let err = SessionScript::parse("0 a peer\n1 a mode ar\n").unwrap_err();
        assert_eq!(err, script_err(2, "a is not in the room"));
        let err = SessionScript::parse("0 a peer res=2000x10\n").unwrap_err();
        assert!(matches!(err, SessionError::Script { line: 1, .. }));
        let err = SessionScript::parse("0 a peer\n0 a join\n0 a snapshot video\n").unwrap_err();
        assert_eq!(err, script_err(3, "a has no pose yet"));
    }

    #[test]
    fn fifth_join_is_rejected() {
        let mut text = String::new();
        for i in 1..=5 {
            text += &format!("0 p{i} peer\n");
        }
        for i in 1..=4 {
            text += &format!("0 p{i} join\n");
        }
        assert!(SessionScript::parse(&text).is_ok());
        text += "0 p5 join\n";
        let err = SessionScript::parse(&text).unwrap_err();
        assert_eq!(err, script_err(10, ProtocolError::RoomFull(4)));
    }

    #[test]
    fn clean_two_peer_session() {
        let script = SessionScript::parse(TWO_PEERS).unwrap();
        let out = simulate(&script, 7, Path::new(".")).unwrap();
        let r = &out.report;
        assert_eq!(r.peers, 2);
        assert_eq!(r.frames_dropped, 0);
        assert_eq!(r.frames_delivered, r.frames_sent);
        assert!(r.frames_sent > 0);
        let lat = r.latency_ms.unwrap();
        assert_eq!((lat.min, lat.max), (100.0, 100.0));
        assert!(r.replicas_converged);
        let bound = quantization_bound(&ColorizationParams::env_profile());
        assert!(r.env_depth_rmse_m.unwrap() <= bound);
        assert!(r.consistency_max_dev_m.unwrap() < 1e-9);
        // 10 fps over 0..=500 ms is 6 composites per peer.
        assert_eq!(r.composites, 12);
    }

    #[test]
    fn report_regenerates_from_log() {
        let script = SessionScript::parse(TWO_PEERS).unwrap();
        let out = simulate(&script, 1, Path::new(".")).unwrap();
        let records = parse_events(&out.events_text()).unwrap();
        let again = MetricsReport::from_log(&records, &out.digest_lines).unwrap();
        assert_eq!(again.to_string(), out.report.to_string());
    }

    #[test]
    fn reruns_are_identical() {
        let text = TWO_PEERS.replace("jitter_ms=0 loss=0", "jitter_ms=20 loss=0.3");
        let script = SessionScript::parse(&text).unwrap();
        let a = simulate(&script, 5, Path::new(".")).unwrap();
        let b = simulate(&script, 5, Path::new(".")).unwrap();
        assert_eq!(a.report.to_string(), b.report.to_string());
        assert_eq!(a.events_text(), b.events_text());
        let c = simulate(&script, 6, Path::new(".")).unwrap();
        assert_ne!(a.events_text(), c.events_text());
        assert_eq!(a.report.frames_sent, a.report.frames_delivered + a.report.frames_dropped);
    }

    #[test]
    fn representation_off_stops_streams() {
        let text = TWO_PEERS.replace("0 bob join\n", "0 bob join\n0 bob envrep off\n0 alice envrep video\n");
        let out = simulate(&SessionScript::parse(&text).unwrap(), 1, Path::new(".")).unwrap();
        // A sender follows its own replica, which changes immediately: bob
        // streams nothing and alice sends color only.
        assert_eq!(out.report.env_depth_rmse_m, None);
        assert_eq!(out.report.composites, 6);
        // Alice's first frame leaves before bob's join reaches her replica.
        assert_eq!(out.report.frames_delivered, 5);
        let bob = &out.replicas[&PeerId(1)].peers[&PeerId(2)];
        assert_eq!(bob.env_rep, EnvRep::Off);
        let alice = &out.replicas[&PeerId(2)].peers[&PeerId(1)];
        assert_eq!(alice.env_rep, EnvRep::VideoFeed);
    }

    #[test]
    fn snapshots_persist_and_union() {
        let text = TWO_PEERS.replace(
            "500 - end\n",
            "200 alice snapshot hologram\n250 alice pose 1.2,0,1.0\n300 alice snapshot hologram\n310 alice snapshot video\n400 alice leave\n500 - end\n",
        );
        let out = simulate(&SessionScript::parse(&text).unwrap(), 1, Path::new(".")).unwrap();
        assert_eq!(out.snapshot_clouds.len(), 2);
        let total: usize = out.snapshot_clouds.values().map(|c| c.len()).sum();
        let mut union = PointCloud::default();
        for c in out.snapshot_clouds.values() {
            union.extend(c);
        }
        assert_eq!(union.len(), total);
        assert_eq!(total, 2 * 32 * 24);
        for replica in out.replicas.values() {
            assert_eq!(replica.snapshots.len(), 3);
            assert!(!replica.peers.contains_key(&PeerId(1)));
        }
        let names: Vec<&str> = out.artifacts.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names.iter().filter(|n| n.ends_with(".ply")).count(), 2);
        assert_eq!(names.iter().filter(|n| n.ends_with(".ppm")).count(), 1);
    }

    #[test]
    fn four_peers_agree_on_geometry() {
        let mut text = String::from("0 - link av base_ms=50 jitter_ms=10 loss=0\n0 - fps 5\n");
        let anchors = ["0,0,0", "3,1,-2,0.9238795325112867,0,0.3826834323650898,0", "-1,0,4", "0.5,2,0.5,0,0,1,0"];
        for (i, a) in anchors.iter().enumerate() {
            text += &format!("0 p{i} peer anchor={a} res=24x18\n0 p{i} source env sphere\n0 p{i} join\n");
        }
        for i in 0..4 {
            text += &format!("100 p{i} pose {},0,{}\n", i as f64 * 0.7, 1.0 - i as f64 * 0.3);
        }
        text += "1000 - end\n";
        let out = simulate(&SessionScript::parse(&text).unwrap(), 3, Path::new(".")).unwrap();
        let dev = consistency_deviation(&out.probes).unwrap();
        assert!(dev < 1e-9, "{dev}");
        assert_eq!(out.probes[&PeerId(1)].len(), 8);
        // Local coordinates really differ between peers.
        let a = out.probes[&PeerId(1)][0].1;
        let b = out.probes[&PeerId(2)][0].1;
        assert!((a - b).norm() > 0.1);
    }

    #[test]
    fn degradation_grows_with_noise() {
        let k = intrinsics_from_fov(60.0, 45.0, 48, 36).unwrap();
        let study = degradation_study(&Scene::Ramp { near: 0.3, far: 1.8 }, &k, &[0.0, 4.0, 16.0], &[1, 2, 3]).unwrap();
        assert!(study[0].1 <= study[1].1 && study[1].1 <= study[2].1, "{study:?}");
        assert!(study[0].1 <= quantization_bound(&ColorizationParams::env_profile()));
    }

    #[test]
    fn latency_percentile() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let l = LatencyStats::from_samples(&s).unwrap();
        assert_eq!((l.min, l.p95, l.max), (1.0, 95.0, 100.0));
        assert_eq!(l.mean, 50.5);
        assert!(LatencyStats::from_samples(&[]).is_none());
    }
}
