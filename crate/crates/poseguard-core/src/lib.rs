//! CPU-only 6-DoF object pose estimation toolkit.
//!
//! Point-to-point ICP provides the base estimate; an uncertainty loop wraps
//! it with grasp-failure prediction, error-source attribution (noise, bad
//! initialization, occlusion) and targeted mitigation: Bayesian-optimized
//! re-initialization, displacement-field point cloud reconstruction, and
//! next-best-view re-capture. Everything trains and evaluates on synthetic
//! scenes generated in-repo.

pub mod attribution;
pub mod boicp;
pub mod dataset;
pub mod failure;
pub mod geometry;
pub mod metrics;
pub mod nnet;
pub mod pipeline;
pub mod reconstruct;
pub mod registration;
pub mod simscene;

pub use geometry::{Point3, PointCloud, RigidTransform, TriangleMesh};
