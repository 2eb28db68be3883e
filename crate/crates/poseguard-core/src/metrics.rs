//! Alignment-quality and pose-error measures: fitness at a distance
//! threshold, inlier RMSE, directed cloud distances, Chamfer distance and
//! the ADD pose error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{KdTree, PointCloud, RigidTransform};

/// τ1, the tighter fitness threshold (meters).
pub const TAU_FITNESS_TIGHT: f64 = 0.01;
/// τ2, the looser fitness threshold (meters).
pub const TAU_FITNESS_LOOSE: f64 = 0.02;
/// τ3, the inlier-RMSE threshold; also the no-inlier sentinel value.
pub const TAU_RMSE_INLIER: f64 = 0.01;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Inlier RMSE outcome; an empty inlier set is a tagged value, not a fault.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RmseInlier {
    Value(f64),
    NoInliers,
}

impl RmseInlier {
    /// Collapses the no-inlier case to the sentinel value `tau`, keeping
    /// downstream feature vectors bounded and finite.
    pub fn value_or_sentinel(self, tau: f64) -> f64 {
        match self {
            RmseInlier::Value(v) => v,
            RmseInlier::NoInliers => tau,
        }
    }
}

/// The five quality metrics for one aligned pair of clouds. `rmse_inlier`
/// already carries the sentinel (= τ3) when no mesh point has a neighbor
/// within τ3; `rmse_no_inliers` flags that case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub fitness_1cm: f64,
    pub fitness_2cm: f64,
    pub rmse_inlier: f64,
    pub rmse_no_inliers: bool,
    pub dist_mesh_to_scene: f64,
    pub dist_scene_to_mesh: f64,
}

fn check_non_empty(cloud: &PointCloud, name: &str) -> Result<(), MetricsError> {
    if cloud.is_empty() {
        Err(MetricsError::InvalidInput(format!("{name} cloud is empty")))
    } else {
        Ok(())
    }
}

/// Fraction of `mesh_cloud` points whose nearest `scene` point lies strictly
/// within `tau`.
pub fn fitness(mesh_cloud: &PointCloud, scene: &PointCloud, tau: f64) -> Result<f64, MetricsError> {
    check_non_empty(mesh_cloud, "mesh")?;
    check_non_empty(scene, "scene")?;
    if !(tau > 0.0) {
        return Err(MetricsError::InvalidInput("tau must be > 0".into()));
    }
    let tree = KdTree::build(&scene.points);
    let inliers = mesh_cloud
        .points
        .iter()
        .filter(|p| tree.nearest(**p).1 < tau)
        .count();
    Ok(inliers as f64 / mesh_cloud.len() as f64)
}

/// Root mean squared nearest-neighbor distance over the mesh points whose
/// nearest scene neighbor is strictly within `tau`.
pub fn rmse_inlier(
    mesh_cloud: &PointCloud,
    scene: &PointCloud,
    tau: f64,
) -> Result<RmseInlier, MetricsError> {
    check_non_empty(mesh_cloud, "mesh")?;
    check_non_empty(scene, "scene")?;
    if !(tau > 0.0) {
        return Err(MetricsError::InvalidInput("tau must be > 0".into()));
    }
    let tree = KdTree::build(&scene.points);
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for p in &mesh_cloud.points {
        let d = tree.nearest(*p).1;
        if d < tau {
            sum_sq += d * d;
            count += 1;
        }
    }
    if count == 0 {
        Ok(RmseInlier::NoInliers)
    } else {
        Ok(RmseInlier::Value((sum_sq / count as f64).sqrt()))
    }
}

/// Mean nearest-neighbor distance from each point of `a` into `b`.
pub fn directed_distance(a: &PointCloud, b: &PointCloud) -> Result<f64, MetricsError> {
    check_non_empty(a, "source")?;
    check_non_empty(b, "target")?;
    let tree = KdTree::build(&b.points);
    let sum: f64 = a.points.iter().map(|p| tree.nearest(*p).1).sum();
    Ok(sum / a.len() as f64)
}

/// Chamfer distance: the sum of both directed distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64, MetricsError> {
    Ok(directed_distance(a, b)? + directed_distance(b, a)?)
}

/// Average Distance of Model Points between the ground-truth-posed and
/// estimated-posed model cloud.
pub fn add_error(mesh_cloud: &PointCloud, gt: &RigidTransform, est: &RigidTransform) -> f64 {
    assert!(!mesh_cloud.is_empty(), "ADD over an empty model cloud");
    let sum: f64 = mesh_cloud
        .points
        .iter()
        .map(|p| gt.apply_point(*p).distance(est.apply_point(*p)))
        .sum();
    sum / mesh_cloud.len() as f64
}

/// All five metrics at the standard thresholds (τ1 = 1 cm, τ2 = 2 cm,
/// τ3 = 1 cm). `mesh_aligned` is the mesh cloud already mapped by the pose
/// estimate.
pub fn alignment_report(
    mesh_aligned: &PointCloud,
    scene: &PointCloud,
) -> Result<AlignmentReport, MetricsError> {
    check_non_empty(mesh_aligned, "mesh")?;
    check_non_empty(scene, "scene")?;
    let scene_tree = KdTree::build(&scene.points);
    let mesh_tree = KdTree::build(&mesh_aligned.points);
    let n = mesh_aligned.len() as f64;
    let mut within_1cm = 0usize;
    let mut within_2cm = 0usize;
    let mut rmse_sum = 0.0;
    let mut rmse_count = 0usize;
    let mut mesh_to_scene = 0.0;
    for p in &mesh_aligned.points {
        let d = scene_tree.nearest(*p).1;
        mesh_to_scene += d;
        if d < TAU_FITNESS_TIGHT {
            within_1cm += 1;
        }
        if d < TAU_FITNESS_LOOSE {
            within_2cm += 1;
        }
        if d < TAU_RMSE_INLIER {
            rmse_sum += d * d;
            rmse_count += 1;
        }
    }
    let scene_to_mesh: f64 =
        scene.points.iter().map(|p| mesh_tree.nearest(*p).1).sum::<f64>() / scene.len() as f64;
    let (rmse, no_inliers) = if rmse_count == 0 {
        (TAU_RMSE_INLIER, true)
    } else {
        ((rmse_sum / rmse_count as f64).sqrt(), false)
    };
    Ok(AlignmentReport {
        fitness_1cm: within_1cm as f64 / n,
        fitness_2cm: within_2cm as f64 / n,
        rmse_inlier: rmse,
        rmse_no_inliers: no_inliers,
        dist_mesh_to_scene: mesh_to_scene / n,
        dist_scene_to_mesh: scene_to_mesh,
    })
}
