//! Point-to-point ICP with an SVD-based (Kabsch) alignment step — the base
//! pose estimator. Source is the mesh cloud, target is the scene cloud;
//! matching direction is source → target.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{apply_transform, KdTree, Point3, PointCloud, RigidTransform};
use crate::metrics;

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty cloud: {0}")]
    EmptyCloud(String),
    #[error("degenerate correspondences: {0}")]
    DegenerateCorrespondences(String),
    #[error("no overlap: {matched} correspondences at iteration {iteration} (minimum {required})")]
    NoOverlap {
        matched: usize,
        required: usize,
        iteration: usize,
        /// Pose estimate at the point of failure.
        last_estimate: RigidTransform,
    },
}

impl RegistrationError {
    /// The transform the run held when it failed, if any.
    pub fn last_estimate(&self) -> Option<RigidTransform> {
        match self {
            RegistrationError::NoOverlap { last_estimate, .. } => Some(*last_estimate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Hard correspondence rejection cutoff, meters.
    pub correspondence_max_dist: f64,
    /// Convergence when the inlier RMSE changes by less than this, meters.
    pub convergence_tol: f64,
    pub min_correspondences: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            // Kept well under the thinnest library part (2 cm slabs):
            // looser cutoffs let back-surface points match through thin
            // geometry and bias partial-view alignment past the success
            // threshold.
            correspondence_max_dist: 0.008,
            convergence_tol: 1e-6,
            min_correspondences: 10,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<(), RegistrationError> {
        if self.max_iterations == 0 {
            return Err(RegistrationError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.correspondence_max_dist > 0.0) {
            return Err(RegistrationError::InvalidConfig(
                "correspondence_max_dist must be > 0".into(),
            ));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(RegistrationError::InvalidConfig("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Outcome of one ICP run. `transform` maps the source (mesh) frame into the
/// target (scene) frame; `fitness` and `inlier_rmse` are evaluated at the
/// correspondence cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Least-squares rigid alignment for known correspondences: returns the
/// transform minimizing Σ‖T·s_i − t_i‖², reflection excluded by
/// sign-correcting the smallest singular vector.
pub fn kabsch(
    source_pts: &[Point3],
    target_pts: &[Point3],
) -> Result<RigidTransform, RegistrationError> {
    if source_pts.len() != target_pts.len() {
        return Err(RegistrationError::DegenerateCorrespondences(format!(
            "length mismatch: {} vs {}",
            source_pts.len(),
            target_pts.len()
        )));
    }
    let n = source_pts.len();
    if n < 3 {
        return Err(RegistrationError::DegenerateCorrespondences(format!(
            "need at least 3 pairs, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut mu_s = Point3::ORIGIN;
    let mut mu_t = Point3::ORIGIN;
    for (s, t) in source_pts.iter().zip(target_pts) {
        mu_s = mu_s.add(*s);
        mu_t = mu_t.add(*t);
    }
    mu_s = mu_s.scale(inv_n);
    mu_t = mu_t.scale(inv_n);

    // Cross-covariance H = Σ (t_i − μ_t)(s_i − μ_s)ᵀ
    let mut h = [[0.0f64; 3]; 3];
    for (s, t) in source_pts.iter().zip(target_pts) {
        let sc = s.sub(mu_s).to_array();
        let tc = t.sub(mu_t).to_array();
        for r in 0..3 {
            for c in 0..3 {
                h[r][c] += tc[r] * sc[c];
            }
        }
    }
    let h_mat = Matrix3::from_fn(|r, c| h[r][c]);
    let svd = h_mat.svd(true, true);
    let u = svd.u.ok_or_else(|| {
        RegistrationError::DegenerateCorrespondences("svd failed to produce U".into())
    })?;
    let v_t = svd.v_t.ok_or_else(|| {
        RegistrationError::DegenerateCorrespondences("svd failed to produce Vᵀ".into())
    })?;
    // Rank < 2 leaves the rotation under-determined (all points collinear
    // or coincident).
    let max_sv = svd.singular_values[0].max(f64::MIN_POSITIVE);
    if svd.singular_values[1] <= 1e-12 * max_sv {
        return Err(RegistrationError::DegenerateCorrespondences(
            "correspondence configuration is rank-deficient (collinear or coincident)".into(),
        ));
    }
    let det = (u * v_t).determinant();
    let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, det.signum()));
    let r_mat = u * d * v_t;
    let mut rotation = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            rotation[i][j] = r_mat[(i, j)];
        }
    }
    let rot_only = RigidTransform { rotation, translation: [0.0; 3] };
    let rs = rot_only.apply_point(mu_s);
    let translation = [mu_t.x - rs.x, mu_t.y - rs.y, mu_t.z - rs.z];
    Ok(RigidTransform { rotation, translation })
}

/// Iterates: transform source by the current estimate, match each source
/// point to its nearest target point strictly within
/// `correspondence_max_dist`, run Kabsch on the matches, compose. Stops at
/// `max_iterations` or when the inlier RMSE change drops below
/// `convergence_tol`.
pub fn icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    config: &IcpConfig,
) -> Result<IcpResult, RegistrationError> {
    config.validate()?;
    if source.is_empty() {
        return Err(RegistrationError::EmptyCloud("source".into()));
    }
    if target.is_empty() {
        return Err(RegistrationError::EmptyCloud("target".into()));
    }
    let max_dist = config.correspondence_max_dist;
    let tree = KdTree::build(&target.points);
    let mut estimate = *init;
    let mut prev_rmse = f64::INFINITY;
    let mut iterations_used = 0;
    let mut converged = false;
    let mut current_rmse = f64::INFINITY;
    let mut matched_pairs: Vec<(Point3, Point3)> = Vec::with_capacity(source.len());

    for iter in 1..=config.max_iterations {
        iterations_used = iter;
        matched_pairs.clear();
        let mut rmse_sum = 0.0;
        for p in &source.points {
            let tp = estimate.apply_point(*p);
            if let Some((idx, dist)) = tree.nearest_within(tp, max_dist) {
                matched_pairs.push((tp, target.points[idx]));
                rmse_sum += dist * dist;
            }
        }
        if matched_pairs.len() < config.min_correspondences.max(3) {
            return Err(RegistrationError::NoOverlap {
                matched: matched_pairs.len(),
                required: config.min_correspondences.max(3),
                iteration: iter,
                last_estimate: estimate,
            });
        }
        current_rmse = (rmse_sum / matched_pairs.len() as f64).sqrt();
        if (prev_rmse - current_rmse).abs() < config.convergence_tol {
            converged = true;
            break;
        }
        prev_rmse = current_rmse;
        let (src, tgt): (Vec<Point3>, Vec<Point3>) = matched_pairs.iter().copied().unzip();
        let delta = kabsch(&src, &tgt)?;
        estimate = delta.compose(&estimate);
    }
    let _ = current_rmse;

    let aligned = apply_transform(&estimate, source);
    let fitness = metrics::fitness(&aligned, target, max_dist)
        .map_err(|e| RegistrationError::InvalidConfig(e.to_string()))?;
    let inlier_rmse = metrics::rmse_inlier(&aligned, target, max_dist)
        .map_err(|e| RegistrationError::InvalidConfig(e.to_string()))?
        .value_or_sentinel(max_dist);
    Ok(IcpResult { transform: estimate, fitness, inlier_rmse, iterations_used, converged })
}
