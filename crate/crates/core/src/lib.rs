//! Secure point cloud super-resolution: stride downsampling, policy-gated
//! selective coordinate encryption, and forest-based offset regression for
//! reconstructing dense clouds at the client.

pub mod access;
pub mod cloud;
pub mod dataset;
pub mod forest;
pub mod kdtree;
pub mod metrics;
pub mod ply;
pub mod sampling;
pub mod scenes;
pub mod stats;
pub mod upsample;

pub use cloud::{Point3, PointCloud};
