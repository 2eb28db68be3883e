//! Bayesian-optimized ICP initialization: search the 6-DoF initial
//! transform space for the candidate whose ICP outcome maximizes the
//! overlap objective. Seeded random exploration warms up an exact GP
//! surrogate; expected improvement picks each next candidate.

mod gp;

pub use gp::{Gp, GpError};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{apply_transform, PointCloud, RigidTransform};
use crate::metrics::{self, TAU_FITNESS_LOOSE, TAU_RMSE_INLIER};
use crate::registration::{icp, IcpConfig, IcpResult, RegistrationError};

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error("surrogate failure after {evaluated} evaluations: {source}")]
    Surrogate {
        evaluated: usize,
        source: GpError,
        trace: BoTrace,
    },
}

/// Per-parameter search box in the order (x, y, z, roll, pitch, yaw);
/// translations in meters, angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBounds {
    pub min: [f64; 6],
    pub max: [f64; 6],
}

impl Default for SearchBounds {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        Self {
            min: [-0.5, -0.5, -0.5, -pi, -pi, -pi],
            max: [0.5, 0.5, 0.5, pi, pi, pi],
        }
    }
}

impl SearchBounds {
    pub fn validate(&self) -> Result<(), BoError> {
        for d in 0..6 {
            if !(self.min[d] < self.max[d]) {
                return Err(BoError::InvalidBounds(format!(
                    "dimension {d}: min {} must be below max {}",
                    self.min[d], self.max[d]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, params: &[f64; 6]) -> bool {
        (0..6).all(|d| params[d] >= self.min[d] - 1e-12 && params[d] <= self.max[d] + 1e-12)
    }

    fn normalize(&self, params: &[f64; 6]) -> Vec<f64> {
        (0..6)
            .map(|d| (params[d] - self.min[d]) / (self.max[d] - self.min[d]))
            .collect()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 6] {
        let mut p = [0.0; 6];
        for d in 0..6 {
            p[d] = rng.gen_range(self.min[d]..self.max[d]);
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub n_initial_random: usize,
    pub n_iterations: usize,
    /// Kernel length-scales per dimension, in normalized [0,1] units.
    pub length_scales: [f64; 6],
    pub observation_noise: f64,
    pub seed: u64,
    /// Random candidates scored by expected improvement per iteration.
    pub ei_candidates: usize,
    /// Local refinement rounds around the best EI candidate.
    pub ei_refinements: usize,
    /// Objective scoring thresholds and optional pre-scoring refinement.
    pub scoring: ObjectiveConfig,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            n_initial_random: 15,
            n_iterations: 45,
            length_scales: [0.2; 6],
            observation_noise: 1e-6,
            seed: 0,
            ei_candidates: 1024,
            ei_refinements: 3,
            scoring: ObjectiveConfig::default(),
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<(), BoError> {
        if self.n_initial_random == 0 || self.n_iterations == 0 {
            return Err(BoError::InvalidConfig("evaluation counts must be >= 1".into()));
        }
        if self.length_scales.iter().any(|l| !(*l > 0.0)) {
            return Err(BoError::InvalidConfig("length scales must be positive".into()));
        }
        if self.ei_candidates == 0 {
            return Err(BoError::InvalidConfig("ei_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

/// One evaluated candidate: the 6-DoF parameters, the ICP outcome and the
/// recorded objective with its branch flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoCandidate {
    pub params: [f64; 6],
    pub objective: f64,
    /// True when the overlap branch Ω was used (fitness > 0); false for
    /// the centroid-distance branch.
    pub overlap_branch: bool,
    pub icp_result: IcpResult,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    pub evaluations: Vec<BoCandidate>,
    pub best_index: usize,
    /// Records that the overlap objective normalizes the inlier RMSE by
    /// τ3 so both terms are dimensionless.
    pub objective_note: String,
}

impl BoTrace {
    pub fn best(&self) -> &BoCandidate {
        &self.evaluations[self.best_index]
    }

    /// JSON-lines export, one candidate per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.evaluations {
            out.push_str(&serde_json::to_string(c).expect("candidate serializes"));
            out.push('\n');
        }
        out
    }
}

const OBJECTIVE_NOTE: &str =
    "objective = fitness(fitness_tau) - rmse_inlier(rmse_tau)/rmse_tau when fitness > 0, else -centroid distance";

/// Scoring variant for the overlap objective. Defaults score at the
/// standard thresholds (τ2 fitness, τ3 RMSE) with no extra refinement; the
/// pipeline uses a sharper 5 mm scoring after a tight refinement pass,
/// which separates true poses from partial-view impostors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub fitness_tau: f64,
    pub rmse_tau: f64,
    /// Optional second ICP pass applied before scoring.
    pub refine: Option<IcpConfig>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { fitness_tau: TAU_FITNESS_LOOSE, rmse_tau: TAU_RMSE_INLIER, refine: None }
    }
}

fn icp_or_last(
    mesh_cloud: &PointCloud,
    scene: &PointCloud,
    init: &RigidTransform,
    config: &IcpConfig,
) -> Result<IcpResult, BoError> {
    match icp(mesh_cloud, scene, init, config) {
        Ok(r) => Ok(r),
        Err(RegistrationError::NoOverlap { last_estimate, iteration, .. }) => Ok(IcpResult {
            transform: last_estimate,
            fitness: 0.0,
            inlier_rmse: config.correspondence_max_dist,
            iterations_used: iteration,
            converged: false,
        }),
        Err(RegistrationError::DegenerateCorrespondences(_)) => Ok(IcpResult {
            transform: *init,
            fitness: 0.0,
            inlier_rmse: config.correspondence_max_dist,
            iterations_used: 0,
            converged: false,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Overlap objective for one initialization: run ICP from `init`; with any
/// overlap (fitness > 0) score Ω = F − RMSE_inlier/τ (both terms
/// dimensionless), otherwise score the negative distance between the cloud
/// centroids. ICP failures are absorbed into the centroid branch using the
/// last estimate.
pub fn objective(
    mesh_cloud: &PointCloud,
    scene: &PointCloud,
    init: &RigidTransform,
    icp_config: &IcpConfig,
) -> Result<(f64, bool, IcpResult), BoError> {
    objective_with(mesh_cloud, scene, init, icp_config, &ObjectiveConfig::default())
}

/// [`objective`] with explicit scoring thresholds and an optional tight
/// refinement pass before scoring.
pub fn objective_with(
    mesh_cloud: &PointCloud,
    scene: &PointCloud,
    init: &RigidTransform,
    icp_config: &IcpConfig,
    scoring: &ObjectiveConfig,
) -> Result<(f64, bool, IcpResult), BoError> {
    let mut result = icp_or_last(mesh_cloud, scene, init, icp_config)?;
    if let Some(refine_cfg) = &scoring.refine {
        if result.fitness > 0.0 {
            let refined = icp_or_last(mesh_cloud, scene, &result.transform, refine_cfg)?;
            if refined.fitness > 0.0 {
                result = refined;
            }
        }
    }
    let aligned = apply_transform(&result.transform, mesh_cloud);
    let value;
    let overlap_branch;
    if result.fitness > 0.0 {
        let fitness = metrics::fitness(&aligned, scene, scoring.fitness_tau)
            .map_err(|e| BoError::InvalidConfig(e.to_string()))?;
        let rmse = metrics::rmse_inlier(&aligned, scene, scoring.rmse_tau)
            .map_err(|e| BoError::InvalidConfig(e.to_string()))?
            .value_or_sentinel(scoring.rmse_tau);
        value = fitness - rmse / scoring.rmse_tau;
        overlap_branch = true;
    } else {
        value = -aligned.centroid().distance(scene.centroid());
        overlap_branch = false;
    }
    Ok((value, overlap_branch, result))
}

fn transform_from_params(p: &[f64; 6]) -> RigidTransform {
    RigidTransform::from_euler(p[0], p[1], p[2], p[3], p[4], p[5]).expect("finite params")
}

/// Bayesian-optimized initialization search. Returns the ICP result of the
/// best-scoring candidate plus the full evaluation trace.
pub fn bo_icp(
    mesh_cloud: &PointCloud,
    scene: &PointCloud,
    bounds: &SearchBounds,
    bo_config: &BoConfig,
    icp_config: &IcpConfig,
) -> Result<(IcpResult, BoTrace), BoError> {
    bounds.validate()?;
    bo_config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(bo_config.seed);
    let mut trace = BoTrace {
        evaluations: Vec::with_capacity(bo_config.n_initial_random + bo_config.n_iterations),
        best_index: 0,
        objective_note: OBJECTIVE_NOTE.to_string(),
    };

    let mut evaluate = |params: [f64; 6],
                        trace: &mut BoTrace|
     -> Result<(), BoError> {
        let init = transform_from_params(&params);
        let (value, overlap_branch, icp_result) =
            objective_with(mesh_cloud, scene, &init, icp_config, &bo_config.scoring)?;
        trace.evaluations.push(BoCandidate { params, objective: value, overlap_branch, icp_result });
        let i = trace.evaluations.len() - 1;
        if value > trace.evaluations[trace.best_index].objective {
            trace.best_index = i;
        }
        Ok(())
    };

    for _ in 0..bo_config.n_initial_random {
        let params = bounds.sample(&mut rng);
        evaluate(params, &mut trace)?;
    }

    for _ in 0..bo_config.n_iterations {
        let normalized: Vec<Vec<f64>> =
            trace.evaluations.iter().map(|c| bounds.normalize(&c.params)).collect();
        let values: Vec<f64> = trace.evaluations.iter().map(|c| c.objective).collect();
        let gp = match Gp::fit(
            normalized,
            &values,
            &bo_config.length_scales,
            bo_config.observation_noise,
        ) {
            Ok(gp) => gp,
            Err(e) => {
                return Err(BoError::Surrogate {
                    evaluated: trace.evaluations.len(),
                    source: e,
                    trace,
                })
            }
        };
        let best_value = trace.evaluations[trace.best_index].objective;

        // Seeded random multi-start plus local refinement around the best.
        let mut best_params = bounds.sample(&mut rng);
        let mut best_ei = gp.expected_improvement(&bounds.normalize(&best_params), best_value);
        for _ in 1..bo_config.ei_candidates {
            let p = bounds.sample(&mut rng);
            let ei = gp.expected_improvement(&bounds.normalize(&p), best_value);
            if ei > best_ei {
                best_ei = ei;
                best_params = p;
            }
        }
        let mut radius = 0.05;
        for _ in 0..bo_config.ei_refinements {
            for _ in 0..32 {
                let mut p = best_params;
                for d in 0..6 {
                    let span = bounds.max[d] - bounds.min[d];
                    p[d] = (p[d] + rng.gen_range(-radius..radius) * span)
                        .clamp(bounds.min[d], bounds.max[d]);
                }
                let ei = gp.expected_improvement(&bounds.normalize(&p), best_value);
                if ei > best_ei {
                    best_ei = ei;
                    best_params = p;
                }
            }
            radius *= 0.4;
        }
        evaluate(best_params, &mut trace)?;
    }

    let best = trace.best().icp_result;
    Ok((best, trace))
}

#[cfg(test)]
mod tests;
