//! Density-guided diffusion sampling of atomic models.
//!
//! The crate is organized bottom-up:
//!
//! * [`volume`] and [`structure`] read, write and prepare density maps (MRC)
//!   and atomic models (PDB).
//! * [`forward`] simulates density maps from atoms and differentiates the
//!   squared map residual with respect to atom positions.
//! * [`pointcloud`] compresses a map into a weighted point cloud by weighted
//!   k-means; [`transport`] compares point clouds with the debiased Sinkhorn
//!   divergence.
//! * [`alignment`] provides Kabsch superposition and rigid docking into maps.
//! * [`sampler`] runs the reverse diffusion with staged global (point cloud)
//!   and local (density) guidance.
//! * [`metrics`] scores samples against references and maps, and
//!   [`pipeline`] ties everything together for the command-line front end.

pub mod alignment;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod pointcloud;
pub mod sampler;
pub mod structure;
pub mod transport;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::Vec3;
