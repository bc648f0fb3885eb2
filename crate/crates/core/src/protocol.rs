//! Session state replicated over the state channel.
//!
//! Every peer applies the same messages to its own [`RoomState`]. Messages
//! from one sender arrive in order; messages from different senders touch
//! disjoint parts of the state (each peer owns its entry and its snapshots),
//! so replicas converge regardless of how senders interleave. Pose updates
//! additionally use last-writer-wins on the per-sender sequence number.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::composite::{CompositeFrame, Quadrant};
use crate::geometry::{unproject, GeometryError, Intrinsics, Pose, Vec3};
use crate::pointcloud::make_spatial_quad;
use crate::wire::{Reader, Writer};

/// Room capacity used when none is configured.
pub const DEFAULT_MAX_PEERS: usize = 4;
/// Distance of the snapshot coverage plane from the capture pose, meters.
pub const DEFAULT_ANNOTATION_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("room is full ({0} peers)")]
    RoomFull(usize),
    #[error("peer {0} has not joined")]
    UnknownPeer(PeerId),
    #[error("peer {0} already joined")]
    DuplicatePeer(PeerId),
    #[error("message from {sender} targets peer {target}")]
    SenderMismatch { sender: PeerId, target: PeerId },
    #[error("snapshot {0} already exists")]
    DuplicateSnapshot(SnapshotId),
    #[error("snapshot {0} does not exist")]
    UnknownSnapshot(SnapshotId),
    #[error("no active stream for a {0:?} snapshot")]
    StreamInactive(SnapshotKind),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("truncated message: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PeerId(pub u32);

impl std::fmt::Display for PeerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Creator in the upper 32 bits, creator-local counter in the lower ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SnapshotId(pub u64);

impl SnapshotId {
    pub fn new(creator: PeerId, counter: u32) -> Self {
        Self((creator.0 as u64) << 32 | counter as u64)
    }
}

impl std::fmt::Display for SnapshotId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

macro_rules! wire_enum {
    ($name:ident { $($variant:ident = $v:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            fn to_wire(self) -> u8 {
                match self { $($name::$variant => $v),+ }
            }

            fn from_wire(b: u8) -> Option<Self> {
                match b { $($v => Some($name::$variant),)+ _ => None }
            }
        }
    };
}

wire_enum!(SelfRep { Hologram3D = 0, SpatialVideo = 1, SpatialVideoNoBackground = 2, Off = 3 });
wire_enum!(EnvRep { Hologram = 0, VideoFeed = 1, Off = 2 });
wire_enum!(CallMode { Ar = 0, Screen = 1 });
wire_enum!(SnapshotKind { VideoFrame = 0, Hologram = 1 });

/// Laser pointer ray in the anchor frame; `direction` is unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointerRay {
    pub origin: Vec3,
    pub direction: Vec3,
}

/// Which composite (and which of its quadrants) a snapshot froze.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PayloadRef {
    pub source: PeerId,
    pub composite_seq: u64,
    /// Bit `i` set when quadrant `i` (see [`Quadrant::index`]) is included.
    pub quadrant_mask: u8,
}

impl PayloadRef {
    pub fn includes(&self, q: Quadrant) -> bool {
        self.quadrant_mask & (1 << q.index()) != 0
    }
}

/// Snapshot annotation: a marker at the capture origin and the plane covered
/// by the camera view at the annotation distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub origin: Vec3,
    pub plane: [Vec3; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageBody {
    Join { peer: PeerId },
    Leave { peer: PeerId },
    PoseUpdate { peer: PeerId, pose: Pose, timestamp_us: u64 },
    SelfRepChange { peer: PeerId, mode: SelfRep },
    EnvRepChange { peer: PeerId, mode: EnvRep },
    ModeSwitch { peer: PeerId, mode: CallMode },
    SnapshotCreate {
        peer: PeerId,
        snapshot: SnapshotId,
        kind: SnapshotKind,
        capture_pose: Pose,
        intrinsics_digest: [u8; 8],
        coverage: Coverage,
        payload: PayloadRef,
    },
    SnapshotVisibility { snapshot: SnapshotId, visible: bool },
    SnapshotDelete { snapshot: SnapshotId },
    Pointer { peer: PeerId, ray: PointerRay, active: bool },
    AnchorRepositioned { peer: PeerId },
}

impl MessageBody {
    fn tag(&self) -> u8 {
        match self {
            MessageBody::Join { .. } => 1,
            MessageBody::Leave { .. } => 2,
            MessageBody::PoseUpdate { .. } => 3,
            MessageBody::SelfRepChange { .. } => 4,
            MessageBody::EnvRepChange { .. } => 5,
            MessageBody::ModeSwitch { .. } => 6,
            MessageBody::SnapshotCreate { .. } => 7,
            MessageBody::SnapshotVisibility { .. } => 8,
            MessageBody::SnapshotDelete { .. } => 9,
            MessageBody::Pointer { .. } => 10,
            MessageBody::AnchorRepositioned { .. } => 11,
        }
    }

    /// The peer whose own state this message changes, if any.
    pub fn target_peer(&self) -> Option<PeerId> {
        match *self {
            MessageBody::Join { peer }
            | MessageBody::Leave { peer }
            | MessageBody::PoseUpdate { peer, .. }
            | MessageBody::SelfRepChange { peer, .. }
            | MessageBody::EnvRepChange { peer, .. }
            | MessageBody::ModeSwitch { peer, .. }
            | MessageBody::SnapshotCreate { peer, .. }
            | MessageBody::Pointer { peer, .. }
            | MessageBody::AnchorRepositioned { peer } => Some(peer),
            MessageBody::SnapshotVisibility { .. } | MessageBody::SnapshotDelete { .. } => None,
        }
    }
}

/// A state-channel message: sender, per-sender sequence number, payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: PeerId,
    pub seq: u64,
    pub body: MessageBody,
}

impl Message {
    pub fn new(sender: PeerId, seq: u64, body: MessageBody) -> Self {
        Self { sender, seq, body }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerState {
    /// Latest anchor-relative device pose.
    pub pose: Option<Pose>,
    pose_seq: Option<u64>,
    pub pose_timestamp_us: u64,
    pub self_rep: SelfRep,
    pub env_rep: EnvRep,
    pub call_mode: CallMode,
    pub last_seen_us: u64,
    pub pointer: Option<PointerRay>,
    /// Number of local anchor repositionings announced by this peer.
    pub anchor_epoch: u32,
}

impl Default for PeerState {
    fn default() -> Self {
        Self {
            pose: None,
            pose_seq: None,
            pose_timestamp_us: 0,
            self_rep: SelfRep::Hologram3D,
            env_rep: EnvRep::Hologram,
            call_mode: CallMode::Ar,
            last_seen_us: 0,
            pointer: None,
            anchor_epoch: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub id: SnapshotId,
    pub creator: PeerId,
    pub kind: SnapshotKind,
    pub capture_pose: Pose,
    pub intrinsics_digest: [u8; 8],
    pub coverage: Coverage,
    pub payload: PayloadRef,
    pub visible: bool,
}

/// Outcome of applying one message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Changed,
    /// A pose update older than the one already held; state unchanged.
    Stale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomState {
    pub max_peers: usize,
    pub peers: BTreeMap<PeerId, PeerState>,
    pub snapshots: BTreeMap<SnapshotId, Snapshot>,
}

impl Default for RoomState {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_PEERS)
    }
}

impl RoomState {
    pub fn new(max_peers: usize) -> Self {
        Self { max_peers, peers: BTreeMap::new(), snapshots: BTreeMap::new() }
    }

    fn peer_mut(&mut self, peer: PeerId) -> Result<&mut PeerState, ProtocolError> {
        self.peers.get_mut(&peer).ok_or(ProtocolError::UnknownPeer(peer))
    }

    /// Applies `msg` in place. On error the state is left untouched.
    pub fn apply_mut(&mut self, msg: &Message) -> Result<Applied, ProtocolError> {
        let sender = msg.sender;
        if let Some(target) = msg.body.target_peer() {
            if target != sender {
                return Err(ProtocolError::SenderMismatch { sender, target });
            }
        }
        if !matches!(msg.body, MessageBody::Join { .. }) && !self.peers.contains_key(&sender) {
            return Err(ProtocolError::UnknownPeer(sender));
        }
        match &msg.body {
            MessageBody::Join { peer } => {
                if self.peers.contains_key(peer) {
                    return Err(ProtocolError::DuplicatePeer(*peer));
                }
                if self.peers.len() >= self.max_peers {
                    return Err(ProtocolError::RoomFull(self.max_peers));
                }
                self.peers.insert(*peer, PeerState::default());
            }
            MessageBody::Leave { peer } => {
                self.peers.remove(peer);
            }
            MessageBody::PoseUpdate { peer, pose, timestamp_us } => {
                let state = self.peer_mut(*peer)?;
                if state.pose_seq.is_some_and(|last| msg.seq <= last) {
                    return Ok(Applied::Stale);
                }
                state.pose = Some(*pose);
                state.pose_seq = Some(msg.seq);
                state.pose_timestamp_us = *timestamp_us;
                state.last_seen_us = state.last_seen_us.max(*timestamp_us);
            }
            MessageBody::SelfRepChange { peer, mode } => self.peer_mut(*peer)?.self_rep = *mode,
            MessageBody::EnvRepChange { peer, mode } => self.peer_mut(*peer)?.env_rep = *mode,
            MessageBody::ModeSwitch { peer, mode } => self.peer_mut(*peer)?.call_mode = *mode,
            MessageBody::SnapshotCreate { peer, snapshot, kind, capture_pose, intrinsics_digest, coverage, payload } => {
                if self.snapshots.contains_key(snapshot) {
                    return Err(ProtocolError::DuplicateSnapshot(*snapshot));
                }
                self.snapshots.insert(
                    *snapshot,
                    Snapshot {
                        id: *snapshot,
                        creator: *peer,
                        kind: *kind,
                        capture_pose: *capture_pose,
                        intrinsics_digest: *intrinsics_digest,
                        coverage: *coverage,
                        payload: *payload,
                        visible: true,
                    },
                );
            }
            MessageBody::SnapshotVisibility { snapshot, visible } => {
                self.snapshots.get_mut(snapshot).ok_or(ProtocolError::UnknownSnapshot(*snapshot))?.visible = *visible;
            }
            MessageBody::SnapshotDelete { snapshot } => {
                self.snapshots.remove(snapshot).ok_or(ProtocolError::UnknownSnapshot(*snapshot))?;
            }
            MessageBody::Pointer { peer, ray, active } => {
                self.peer_mut(*peer)?.pointer = active.then_some(*ray);
            }
            MessageBody::AnchorRepositioned { peer } => {
                let state = self.peer_mut(*peer)?;
                state.anchor_epoch = state.anchor_epoch.wrapping_add(1);
            }
        }
        Ok(Applied::Changed)
    }

    /// Canonical byte form: identical states encode identically.
    pub fn encode_canonical(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.put_u32(self.max_peers as u32);
        out.put_u32(self.peers.len() as u32);
        for (id, p) in &self.peers {
            out.put_u32(id.0);
            match (&p.pose, p.pose_seq) {
                (Some(pose), Some(seq)) => {
                    out.put_u8(1);
                    put_pose(&mut out, pose);
                    out.put_u64(seq);
                }
                _ => out.put_u8(0),
            }
            out.put_u64(p.pose_timestamp_us);
            out.put_u8(p.self_rep.to_wire());
            out.put_u8(p.env_rep.to_wire());
            out.put_u8(p.call_mode.to_wire());
            out.put_u64(p.last_seen_us);
            match &p.pointer {
                Some(ray) => {
                    out.put_u8(1);
                    put_ray(&mut out, ray);
                }
                None => out.put_u8(0),
            }
            out.put_u32(p.anchor_epoch);
        }
        out.put_u32(self.snapshots.len() as u32);
        for s in self.snapshots.values() {
            out.put_u64(s.id.0);
            out.put_u32(s.creator.0);
            out.put_u8(s.kind.to_wire());
            put_pose(&mut out, &s.capture_pose);
            out.extend_from_slice(&s.intrinsics_digest);
            put_coverage(&mut out, &s.coverage);
            put_payload(&mut out, &s.payload);
            out.put_u8(s.visible as u8);
        }
        out
    }

    /// Hex SHA-256 of the canonical encoding.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        crate::hex(&Sha256::digest(self.encode_canonical()))
    }
}

/// Pure transition: returns the next state, or the error that rejected `msg`.
pub fn apply(state: &RoomState, msg: &Message) -> Result<RoomState, ProtocolError> {
    let mut next = state.clone();
    next.apply_mut(msg)?;
    Ok(next)
}

fn put_vec3(out: &mut Vec<u8>, v: &Vec3) {
    for c in v.iter() {
        out.put_f64(*c);
    }
}

fn put_pose(out: &mut Vec<u8>, p: &Pose) {
    put_vec3(out, &p.translation);
    for c in p.quaternion_wxyz() {
        out.put_f64(c);
    }
}

fn put_ray(out: &mut Vec<u8>, r: &PointerRay) {
    put_vec3(out, &r.origin);
    put_vec3(out, &r.direction);
}

fn put_coverage(out: &mut Vec<u8>, c: &Coverage) {
    put_vec3(out, &c.origin);
    for corner in &c.plane {
        put_vec3(out, corner);
    }
}

fn put_payload(out: &mut Vec<u8>, p: &PayloadRef) {
    out.put_u32(p.source.0);
    out.put_u64(p.composite_seq);
    out.put_u8(p.quadrant_mask);
}

/// Tag–length–value framing: `tag u8 | len u32 | value | crc32 u32`, where the
/// CRC covers tag, length and value, and the value starts with `sender u32,
/// seq u64`.
pub fn encode_message(msg: &Message) -> Vec<u8> {
    let mut value = Vec::with_capacity(64);
    value.put_u32(msg.sender.0);
    value.put_u64(msg.seq);
    match &msg.body {
        MessageBody::Join { peer }
        | MessageBody::Leave { peer }
        | MessageBody::AnchorRepositioned { peer } => value.put_u32(peer.0),
        MessageBody::PoseUpdate { peer, pose, timestamp_us } => {
            value.put_u32(peer.0);
            put_pose(&mut value, pose);
            value.put_u64(*timestamp_us);
        }
        MessageBody::SelfRepChange { peer, mode } => {
            value.put_u32(peer.0);
            value.put_u8(mode.to_wire());
        }
        MessageBody::EnvRepChange { peer, mode } => {
            value.put_u32(peer.0);
            value.put_u8(mode.to_wire());
        }
        MessageBody::ModeSwitch { peer, mode } => {
            value.put_u32(peer.0);
            value.put_u8(mode.to_wire());
        }
        MessageBody::SnapshotCreate { peer, snapshot, kind, capture_pose, intrinsics_digest, coverage, payload } => {
            value.put_u32(peer.0);
            value.put_u64(snapshot.0);
            value.put_u8(kind.to_wire());
            put_pose(&mut value, capture_pose);
            value.extend_from_slice(intrinsics_digest);
            put_coverage(&mut value, coverage);
            put_payload(&mut value, payload);
        }
        MessageBody::SnapshotVisibility { snapshot, visible } => {
            value.put_u64(snapshot.0);
            value.put_u8(*visible as u8);
        }
        MessageBody::SnapshotDelete { snapshot } => value.put_u64(snapshot.0),
        MessageBody::Pointer { peer, ray, active } => {
            value.put_u32(peer.0);
            put_ray(&mut value, ray);
            value.put_u8(*active as u8);
        }
    }
    let mut out = Vec::with_capacity(value.len() + 9);
    out.put_u8(msg.body.tag());
    out.put_u32(value.len() as u32);
    out.extend_from_slice(&value);
    let crc = crc32fast::hash(&out);
    out.put_u32(crc);
    out
}

struct BodyReader<'a>(Reader<'a>);

impl BodyReader<'_> {
    fn short() -> ProtocolError {
        ProtocolError::Malformed("value shorter than its fields".into())
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        self.0.u8().ok_or_else(Self::short)
    }
    fn u32(&mut self) -> Result<u32, ProtocolError> {
        self.0.u32().ok_or_else(Self::short)
    }
    fn u64(&mut self) -> Result<u64, ProtocolError> {
        self.0.u64().ok_or_else(Self::short)
    }
    fn peer(&mut self) -> Result<PeerId, ProtocolError> {
        self.u32().map(PeerId)
    }
    fn bool(&mut self) -> Result<bool, ProtocolError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(ProtocolError::Malformed(format!("boolean byte {b}"))),
        }
    }
    fn f64(&mut self) -> Result<f64, ProtocolError> {
        let v = self.0.f64().ok_or_else(Self::short)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ProtocolError::Malformed("non-finite coordinate".into()))
        }
    }
    fn vec3(&mut self) -> Result<Vec3, ProtocolError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn pose(&mut self) -> Result<Pose, ProtocolError> {
        let t = self.vec3()?;
        let q = nalgebra::Quaternion::new(self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NonUnitQuaternion(q.norm()).into());
        }
        // Kept bit-exact; the norm check above bounds the drift.
        Ok(Pose::new(t, nalgebra::UnitQuaternion::new_unchecked(q)))
    }
    fn ray(&mut self) -> Result<PointerRay, ProtocolError> {
        let origin = self.vec3()?;
        let direction = self.vec3()?;
        if (direction.norm() - 1.0).abs() > 1e-6 {
            return Err(ProtocolError::Malformed("pointer direction is not unit length".into()));
        }
        Ok(PointerRay { origin, direction })
    }
    fn enum_byte<T>(&mut self, what: &str, f: fn(u8) -> Option<T>) -> Result<T, ProtocolError> {
        let b = self.u8()?;
        f(b).ok_or_else(|| ProtocolError::Malformed(format!("{what} value {b}")))
    }
}

pub fn decode_message(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let truncated = |needed: usize| ProtocolError::Truncated { needed, available: bytes.len() };
    if bytes.len() < 5 {
        return Err(truncated(5));
    }
    let tag = bytes[0];
    let len = u32::from_le_bytes(bytes[1..5].try_into().expect("4 bytes")) as usize;
    let total = 5usize.checked_add(len).and_then(|n| n.checked_add(4)).ok_or_else(|| truncated(usize::MAX))?;
    if bytes.len() < total {
        return Err(truncated(total));
    }
    if bytes.len() > total {
        return Err(ProtocolError::Malformed(format!("{} trailing bytes", bytes.len() - total)));
    }
    let stored = u32::from_le_bytes(bytes[total - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..total - 4]);
    if stored != computed {
        return Err(ProtocolError::ChecksumMismatch { stored, computed });
    }

    let mut r = BodyReader(Reader::new(&bytes[5..total - 4]));
    let sender = r.peer()?;
    let seq = r.u64()?;
    let body = match tag {
        1 => MessageBody::Join { peer: r.peer()? },
        2 => MessageBody::Leave { peer: r.peer()? },
        3 => MessageBody::PoseUpdate { peer: r.peer()?, pose: r.pose()?, timestamp_us: r.u64()? },
        4 => MessageBody::SelfRepChange { peer: r.peer()?, mode: r.enum_byte("self representation", SelfRep::from_wire)? },
        5 => MessageBody::EnvRepChange { peer: r.peer()?, mode: r.enum_byte("environment representation", EnvRep::from_wire)? },
        6 => MessageBody::ModeSwitch { peer: r.peer()?, mode: r.enum_byte("call mode", CallMode::from_wire)? },
        7 => MessageBody::SnapshotCreate {
            peer: r.peer()?,
            snapshot: SnapshotId(r.u64()?),
            kind: r.enum_byte("snapshot kind", SnapshotKind::from_wire)?,
            capture_pose: r.pose()?,
            intrinsics_digest: r.0.array().ok_or_else(BodyReader::short)?,
            coverage: Coverage { origin: r.vec3()?, plane: [r.vec3()?, r.vec3()?, r.vec3()?, r.vec3()?] },
            payload: PayloadRef { source: r.peer()?, composite_seq: r.u64()?, quadrant_mask: r.u8()? },
        },
        8 => MessageBody::SnapshotVisibility { snapshot: SnapshotId(r.u64()?), visible: r.bool()? },
        9 => MessageBody::SnapshotDelete { snapshot: SnapshotId(r.u64()?) },
        10 => MessageBody::Pointer { peer: r.peer()?, ray: r.ray()?, active: r.bool()? },
        11 => MessageBody::AnchorRepositioned { peer: r.peer()? },
        other => return Err(ProtocolError::UnknownTag(other)),
    };
    if r.0.remaining() != 0 {
        return Err(ProtocolError::Malformed(format!("{} unread value bytes", r.0.remaining())));
    }
    Ok(Message { sender, seq, body })
}

/// Pointer ray through the touched pixel, in the anchor frame.
pub fn pointer_ray(u: f64, v: f64, k: &Intrinsics, device_pose_anchor_rel: &Pose) -> Result<PointerRay, ProtocolError> {
    let through = unproject(u, v, 1.0, k)?;
    Ok(PointerRay {
        origin: device_pose_anchor_rel.translation,
        direction: device_pose_anchor_rel.rotate_vector(&through).normalize(),
    })
}

/// Touch at `(u, v)` on the screen: an active pointer message body.
pub fn point_at(peer: PeerId, u: f64, v: f64, k: &Intrinsics, device_pose_anchor_rel: &Pose) -> Result<MessageBody, ProtocolError> {
    Ok(MessageBody::Pointer { peer, ray: pointer_ray(u, v, k, device_pose_anchor_rel)?, active: true })
}

/// What a sender most recently streamed, as far as snapshots care.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamStatus {
    pub source: PeerId,
    pub composite_seq: u64,
    pub env_color: bool,
    pub env_depth: bool,
}

impl StreamStatus {
    pub fn from_composite(source: PeerId, f: &CompositeFrame) -> Self {
        Self {
            source,
            composite_seq: f.seq,
            env_color: f.info(Quadrant::EnvColor).present,
            env_depth: f.info(Quadrant::EnvDepth).present,
        }
    }
}

/// Freezes the current environment stream at the current device pose.
pub fn take_snapshot(
    peer: PeerId,
    snapshot: SnapshotId,
    kind: SnapshotKind,
    latest: Option<&StreamStatus>,
    capture_pose: &Pose,
    k: &Intrinsics,
    annotation_distance: f64,
) -> Result<MessageBody, ProtocolError> {
    let status = latest.ok_or(ProtocolError::StreamInactive(kind))?;
    let mask = match kind {
        SnapshotKind::VideoFrame if status.env_color => 1 << Quadrant::EnvColor.index(),
        SnapshotKind::Hologram if status.env_color && status.env_depth => {
            (1 << Quadrant::EnvColor.index()) | (1 << Quadrant::EnvDepth.index())
        }
        _ => return Err(ProtocolError::StreamInactive(kind)),
    };
    let quad = make_spatial_quad(capture_pose, k, annotation_distance)
        .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    Ok(MessageBody::SnapshotCreate {
        peer,
        snapshot,
        kind,
        capture_pose: *capture_pose,
        intrinsics_digest: k.digest(),
        coverage: Coverage { origin: capture_pose.translation, plane: quad.corners },
        payload: PayloadRef { source: status.source, composite_seq: status.composite_seq, quadrant_mask: mask },
    })
}
