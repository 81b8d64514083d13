//! Rig-free prediction of time-dependent deformations for unregistered triangle meshes.
//!
//! The pipeline extracts per-vertex heat-diffusion features on a source mesh,
//! embeds a target motion sequence into a code time series, and recursively
//! decodes per-vertex displacements that carry the source through the motion.

pub mod autodiff;
pub mod embedding;
pub mod error;
pub mod features;
pub mod generator;
pub mod geom;
pub mod losses;
pub mod mesh;
pub mod nn;
pub mod spectral;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use mesh::{MotionSequence, RemeshVariant, TriMesh};
