//! Dual RGB-D stream pipeline: depth colorization, composite framing,
//! anchor-relative session state, a deterministic two-channel network
//! simulator and point-cloud reconstruction.

pub mod composite;
pub mod config;
pub mod depthcodec;
pub mod geometry;
pub mod netsim;
pub mod pnm;
pub mod pointcloud;
pub mod protocol;
pub mod scene;
pub mod session;
pub mod bench;

mod wire;

pub use depthcodec::{ColorFrame, DepthFrame};
pub use geometry::{AnchorFrame, Intrinsics, Pose};

/// First eight bytes of the SHA-256 of `bytes`.
pub(crate) fn digest8(bytes: &[u8]) -> [u8; 8] {
    use sha2::{Digest, Sha256};
    let full = Sha256::digest(bytes);
    let mut out = [0u8; 8];
    out.copy_from_slice(&full[..8]);
    out
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
