//! Garment refitting between rigged avatars that share a pose.

pub mod bone_local;
pub mod contact;
pub mod error;
pub mod geometry;
pub mod hierarchy;
pub mod init;
pub mod io;
pub mod losses;
pub mod optimizer;
pub mod scene;
pub mod skeleton;
pub mod synth;
pub mod verify;

pub use error::{RefitError, Result};
