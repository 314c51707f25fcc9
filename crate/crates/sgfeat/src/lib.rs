//! Point cloud registration built around salient superpoints.
//!
//! The pipeline aligns a source scan to a target scan in five stages:
//! deterministic local descriptors on downsampled superpoints, a pyramid
//! semantic encoder that exchanges object-level context between frames, a
//! distance-biased geometric transformer, a high-order transformer that
//! scores triangle consistency against far-away anchor points inside the
//! candidate overlap region, and Sinkhorn-based dense matching feeding a
//! local-to-global rigid estimator.
//!
//! Everything is seeded and deterministic: there is no training loop, all
//! attention weights are orthogonal-initialized from a config seed, and the
//! geometric machinery is verifiable against brute-force oracles.

pub mod cloud;
pub mod config;
pub mod error;
pub mod features;
pub mod hot;
pub mod matching;
pub mod pipeline;
pub mod ply;
pub mod registration;
pub mod report;
pub mod saliency;
pub mod scenes;
pub mod spatial;

pub use cloud::{CloudLevel, NodePartition, PointCloud, RigidTransform};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use matching::CorrespondenceSet;
pub use pipeline::{ComponentFlags, PipelineWeights};

/// 3D point in meters. All geometry is 64-bit.
pub type Point3 = nalgebra::Point3<f64>;
/// 3-vector in meters.
pub type Vector3 = nalgebra::Vector3<f64>;
/// Row-major feature matrix; one row per point, `d_t` columns.
pub type FeatureMatrix = nalgebra::DMatrix<f64>;
