//! Procedural articulated bodies with registered ground-truth motion.
//!
//! Bodies are skinned to an internal skeleton that never leaves this module;
//! callers only see triangle meshes.

mod body;
mod dataset;
mod icosphere;
mod motion;

pub use body::{build_body, Body, IdentitySpec};
pub use dataset::{
    make_dataset, unregister, DatasetConfig, DatasetManifest, SequenceEntry, Split,
    MANIFEST_FILE, MANIFEST_VERSION,
};
pub use icosphere::icosphere;
pub use motion::{animate, rest_pose, MotionKind, MotionSpec};
