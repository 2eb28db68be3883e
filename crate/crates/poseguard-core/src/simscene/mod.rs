//! Synthetic scene generation: viewpoint ray-cast rendering with occlusion,
//! the three error cases plus clean scenes, structured patch corruption,
//! and the discrete next-best-view occlusion mitigation over a hemisphere
//! ring of candidate viewpoints.

pub mod render;
pub mod shapes;

pub use render::{render_visible, visibility, ObjectTag, SceneObject, TaggedCloud, Viewpoint};
pub use shapes::ObjectKind;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::ErrorClass;
use crate::geometry::{sample_mesh, GeometryError, Point3, PointCloud, RigidTransform};

/// Surface-sample count used for all visibility scoring (generation
/// headroom checks and next-best-view ranking use the same basis).
pub const VISIBILITY_SAMPLES: usize = 1024;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("generation failure: {0}")]
    GenerationFailure(String),
    #[error("no candidate viewpoint sees the target")]
    NoVisibleView,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Structured corruption: `n_patches` spherical patches, each rigidly
/// shifted by a seeded vector with magnitude drawn from `magnitude_range`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub n_patches: usize,
    pub radius_range: (f64, f64),
    pub magnitude_range: (f64, f64),
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self { n_patches: 4, radius_range: (0.02, 0.04), magnitude_range: (0.02, 0.05) }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        let ordered = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo;
        if !ordered(self.radius_range) || !ordered(self.magnitude_range) {
            return Err(SceneError::GenerationFailure(
                "corruption ranges must be positive and ordered".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneCase {
    Clean,
    Noise,
    BadInit,
    Occlusion,
}

impl SceneCase {
    pub const ALL: [SceneCase; 4] =
        [SceneCase::Clean, SceneCase::Noise, SceneCase::BadInit, SceneCase::Occlusion];

    pub fn name(self) -> &'static str {
        match self {
            SceneCase::Clean => "clean",
            SceneCase::Noise => "noise",
            SceneCase::BadInit => "badinit",
            SceneCase::Occlusion => "occlusion",
        }
    }

    pub fn from_name(name: &str) -> Option<SceneCase> {
        SceneCase::ALL.iter().copied().find(|c| c.name() == name)
    }

    pub fn label(self) -> SceneLabel {
        match self {
            SceneCase::Clean => SceneLabel::Clean,
            SceneCase::Noise => SceneLabel::Error(ErrorClass::Noise),
            SceneCase::BadInit => SceneLabel::Error(ErrorClass::BadInit),
            SceneCase::Occlusion => SceneLabel::Error(ErrorClass::Occlusion),
        }
    }

    fn index(self) -> u64 {
        match self {
            SceneCase::Clean => 0,
            SceneCase::Noise => 1,
            SceneCase::BadInit => 2,
            SceneCase::Occlusion => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneLabel {
    Clean,
    Error(ErrorClass),
}

impl SceneLabel {
    pub fn error_class(self) -> Option<ErrorClass> {
        match self {
            SceneLabel::Clean => None,
            SceneLabel::Error(c) => Some(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccluderSpec {
    pub kind: ObjectKind,
    pub pose: RigidTransform,
}

/// Everything needed to regenerate or re-render one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub object: ObjectKind,
    pub gt_pose: RigidTransform,
    pub init_pose: RigidTransform,
    pub occluders: Vec<OccluderSpec>,
    pub viewpoint: Viewpoint,
    pub corruption: Option<CorruptionSpec>,
    pub seed: u64,
    pub n_rays: usize,
    pub mesh_points: usize,
    pub jitter_sigma: f64,
}

impl SceneSpec {
    /// Posed scene geometry: the target plus its occluders.
    pub fn scene_objects(&self) -> Vec<SceneObject> {
        let mut objects = vec![SceneObject {
            mesh: self.object.mesh(),
            pose: self.gt_pose,
            tag: ObjectTag::Target,
        }];
        for (i, occ) in self.occluders.iter().enumerate() {
            objects.push(SceneObject {
                mesh: occ.kind.mesh(),
                pose: occ.pose,
                tag: ObjectTag::Occluder(i),
            });
        }
        objects
    }
}

/// One synthetic scene: the observed cloud, the clean reference render, the
/// canonical mesh cloud and the poses the pipeline needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub observed: PointCloud,
    pub clean: PointCloud,
    pub mesh_cloud: PointCloud,
    pub gt_pose: RigidTransform,
    pub init_pose: RigidTransform,
    pub label: SceneLabel,
    /// Occlusion scenes: fraction of the otherwise-visible target surface
    /// still visible from the recorded viewpoint.
    pub visible_fraction: Option<f64>,
    pub spec: SceneSpec,
}

/// Scene-generation knobs with the workspace defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_rays: usize,
    pub mesh_points: usize,
    pub camera: Viewpoint,
    /// Clean-case pose offset bounds: translation (m), rotation (rad).
    pub clean_max_offset: f64,
    pub clean_max_angle: f64,
    /// Bad-initialization offset: translation norm range (m), yaw range (rad).
    pub badinit_translation: (f64, f64),
    pub badinit_yaw: (f64, f64),
    /// Occlusion window for the visible-target fraction.
    pub occlusion_visible: (f64, f64),
    pub max_occluder_retries: usize,
    pub corruption: CorruptionSpec,
    /// Direct patch shifts along the view ray (depth-style artifacts)
    /// instead of isotropic random directions.
    pub corruption_along_view: bool,
    /// Per-point Gaussian jitter applied to every rendered cloud (m).
    pub jitter_sigma: f64,
    /// Seeded jitter of the per-scene initial pose hypothesis.
    pub hypothesis_translation_jitter: f64,
    pub hypothesis_yaw_jitter: f64,
    /// Next-best-view candidate ring: azimuth steps at each elevation.
    pub nbv_azimuth_steps: usize,
    pub nbv_elevations: Vec<f64>,
    pub nbv_radius: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_rays: 6144,
            mesh_points: 2048,
            camera: Viewpoint::new(0.8, 0.0, 45.0_f64.to_radians()),
            clean_max_offset: 0.01,
            clean_max_angle: 5.0_f64.to_radians(),
            badinit_translation: (0.15, 0.4),
            badinit_yaw: (30.0_f64.to_radians(), std::f64::consts::PI),
            occlusion_visible: (0.1, 0.5),
            max_occluder_retries: 50,
            corruption: CorruptionSpec::default(),
            corruption_along_view: true,
            jitter_sigma: 1e-3,
            hypothesis_translation_jitter: 0.02,
            hypothesis_yaw_jitter: 10.0_f64.to_radians(),
            nbv_azimuth_steps: 16,
            nbv_elevations: vec![35.0_f64.to_radians(), 65.0_f64.to_radians()],
            nbv_radius: 0.8,
        }
    }
}

impl GenConfig {
    /// The default hemisphere candidate ring used by the generator's
    /// headroom check and by the pipeline's occlusion mitigation.
    pub fn nbv_ring(&self) -> Vec<Viewpoint> {
        let mut out = Vec::with_capacity(self.nbv_azimuth_steps * self.nbv_elevations.len());
        for &elevation in &self.nbv_elevations {
            for k in 0..self.nbv_azimuth_steps {
                let azimuth = 2.0 * std::f64::consts::PI * k as f64 / self.nbv_azimuth_steps as f64;
                out.push(Viewpoint::new(self.nbv_radius, azimuth, elevation));
            }
        }
        out
    }
}

fn mix_seed(base: u64, salt: u64) -> u64 {
    // splitmix64 step
    let mut z = base.wrapping_add(salt.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn jitter_cloud(points: &[Point3], sigma: f64, seed: u64) -> Vec<Point3> {
    if sigma <= 0.0 {
        return points.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    points
        .iter()
        .map(|p| {
            Point3::new(
                p.x + normal.sample(&mut rng),
                p.y + normal.sample(&mut rng),
                p.z + normal.sample(&mut rng),
            )
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v = Point3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return v.scale(1.0 / n);
        }
    }
}

/// Patch parameters resolved from a [`CorruptionSpec`] and a seed.
#[derive(Debug, Clone)]
pub struct ResolvedPatches {
    pub anchors: Vec<usize>,
    pub radii: Vec<f64>,
    pub shifts: Vec<Point3>,
}

fn resolve_patches(
    cloud: &PointCloud,
    spec: &CorruptionSpec,
    seed: u64,
    directions: Option<&[Point3]>,
) -> ResolvedPatches {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = Vec::with_capacity(spec.n_patches);
    let mut radii = Vec::with_capacity(spec.n_patches);
    let mut shifts = Vec::with_capacity(spec.n_patches);
    for k in 0..spec.n_patches {
        anchors.push(rng.gen_range(0..cloud.len()));
        radii.push(rng.gen_range(spec.radius_range.0..=spec.radius_range.1));
        let magnitude = rng.gen_range(spec.magnitude_range.0..=spec.magnitude_range.1);
        let dir = match directions {
            Some(dirs) => dirs[k],
            None => random_unit(&mut rng),
        };
        shifts.push(dir.scale(magnitude));
    }
    ResolvedPatches { anchors, radii, shifts }
}

fn apply_patches(cloud: &PointCloud, patches: &ResolvedPatches) -> PointCloud {
    let anchor_points: Vec<Point3> =
        patches.anchors.iter().map(|&i| cloud.points[i]).collect();
    let points = cloud
        .points
        .iter()
        .map(|p| {
            // First matching patch in anchor order wins.
            for ((anchor, radius), shift) in
                anchor_points.iter().zip(&patches.radii).zip(&patches.shifts)
            {
                if p.distance(*anchor) < *radius {
                    return p.add(*shift);
                }
            }
            *p
        })
        .collect();
    PointCloud { points, frame_tag: cloud.frame_tag.clone() }
}

/// Shifts every point within a seeded anchor's radius by that patch's
/// seeded translation vector (isotropic random directions); a point inside
/// several patches takes the first in anchor order. Count and order are
/// preserved.
pub fn corrupt(clean: &PointCloud, spec: &CorruptionSpec, seed: u64) -> PointCloud {
    assert!(!clean.is_empty(), "corrupt requires a non-empty cloud");
    apply_patches(clean, &resolve_patches(clean, spec, seed, None))
}

/// As [`corrupt`], but each patch shifts along the ray from `eye` through
/// its anchor, with a seeded sign — the displacement signature of a depth
/// error.
pub fn corrupt_along_view(
    clean: &PointCloud,
    spec: &CorruptionSpec,
    seed: u64,
    eye: Point3,
) -> PointCloud {
    assert!(!clean.is_empty(), "corrupt requires a non-empty cloud");
    // Anchors resolve first so directions can reference them; replay the
    // same anchor/radius/magnitude draws with directions supplied.
    let preliminary = resolve_patches(clean, spec, seed, None);
    let mut sign_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5167));
    let directions: Vec<Point3> = preliminary
        .anchors
        .iter()
        .map(|&i| {
            let sign = if sign_rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            clean.points[i].sub(eye).normalized().scale(sign)
        })
        .collect();
    apply_patches(clean, &resolve_patches(clean, spec, seed, Some(&directions)))
}

/// Deterministic synthetic scene for one error case. Identical
/// (case, object, seed, config) inputs produce byte-identical samples.
pub fn generate(
    case: SceneCase,
    object: ObjectKind,
    seed: u64,
    config: &GenConfig,
) -> Result<SceneSample, SceneError> {
    config.corruption.validate()?;
    let root = mix_seed(seed, case.index().wrapping_add(17));
    let mut rng = ChaCha8Rng::seed_from_u64(root);

    // Fixed-per-scene pose hypothesis near the workspace center.
    let ht = config.hypothesis_translation_jitter;
    let init_pose = {
        let yaw = rng.gen_range(-config.hypothesis_yaw_jitter..=config.hypothesis_yaw_jitter);
        let tx = rng.gen_range(-ht..=ht);
        let ty = rng.gen_range(-ht..=ht);
        let tz = rng.gen_range(-ht / 2.0..=ht / 2.0);
        RigidTransform::from_euler(tx, ty, tz, 0.0, 0.0, yaw).expect("finite")
    };

    // Ground-truth pose per case; constructed so the recounted offsets are
    // exactly within the configured bounds.
    let gt_pose = match case {
        SceneCase::BadInit => {
            let dist = rng.gen_range(config.badinit_translation.0..config.badinit_translation.1);
            let angle_xy = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let dz = rng.gen_range(-0.05..0.05);
            let horiz = (dist * dist - dz * dz).max(0.0).sqrt();
            let offset = Point3::new(horiz * angle_xy.cos(), horiz * angle_xy.sin(), dz);
            let yaw = rng.gen_range(config.badinit_yaw.0..config.badinit_yaw.1)
                * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let rot = RigidTransform::from_axis_angle(Point3::new(0.0, 0.0, 1.0), yaw);
            RigidTransform {
                rotation: rot.compose(&init_pose).rotation,
                translation: [
                    init_pose.translation[0] + offset.x,
                    init_pose.translation[1] + offset.y,
                    init_pose.translation[2] + offset.z,
                ],
            }
        }
        _ => {
            let dist = rng.gen_range(0.0..config.clean_max_offset);
            let offset = random_unit(&mut rng).scale(dist);
            let angle = rng.gen_range(0.0..config.clean_max_angle);
            let axis = random_unit(&mut rng);
            let rot = RigidTransform::from_axis_angle(axis, angle);
            RigidTransform {
                rotation: rot.compose(&init_pose).rotation,
                translation: [
                    init_pose.translation[0] + offset.x,
                    init_pose.translation[1] + offset.y,
                    init_pose.translation[2] + offset.z,
                ],
            }
        }
    };

    let target = SceneObject { mesh: object.mesh(), pose: gt_pose, tag: ObjectTag::Target };
    let render_seed = mix_seed(root, 2);

    // Occluder placement with a visibility window and NBV headroom.
    let mut occluders: Vec<OccluderSpec> = Vec::new();
    let mut visible_fraction = None;
    if case == SceneCase::Occlusion {
        let ring = config.nbv_ring();
        let eye = config.camera.position();
        let obj_center = gt_pose.apply_point(Point3::ORIGIN);
        let open_vis =
            visibility(std::slice::from_ref(&target), ObjectTag::Target, &config.camera, VISIBILITY_SAMPLES);
        if open_vis <= 0.0 {
            return Err(SceneError::GenerationFailure(
                "target invisible from the recording viewpoint".into(),
            ));
        }
        let mut placed = false;
        for _ in 0..config.max_occluder_retries {
            let kind = if rng.gen_bool(0.5) { ObjectKind::Box } else { ObjectKind::Cylinder };
            let lambda = rng.gen_range(0.35..0.65);
            let base = Point3::new(
                eye.x + (obj_center.x - eye.x) * lambda,
                eye.y + (obj_center.y - eye.y) * lambda,
                eye.z + (obj_center.z - eye.z) * lambda,
            );
            let lateral = Point3::new(
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
            );
            let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let pose = RigidTransform {
                rotation: RigidTransform::from_axis_angle(Point3::new(0.0, 0.0, 1.0), yaw)
                    .rotation,
                translation: [base.x + lateral.x, base.y + lateral.y, base.z + lateral.z],
            };
            let candidate = OccluderSpec { kind, pose };
            let objects = vec![
                target.clone(),
                SceneObject { mesh: kind.mesh(), pose, tag: ObjectTag::Occluder(0) },
            ];
            let occluded_vis =
                visibility(&objects, ObjectTag::Target, &config.camera, VISIBILITY_SAMPLES);
            let fraction = occluded_vis / open_vis;
            if fraction < config.occlusion_visible.0 || fraction > config.occlusion_visible.1 {
                continue;
            }
            // Headroom: some ring candidate must see the target better.
            let headroom = ring.iter().any(|vp| {
                visibility(&objects, ObjectTag::Target, vp, VISIBILITY_SAMPLES) > occluded_vis
            });
            if !headroom {
                continue;
            }
            occluders.push(candidate);
            visible_fraction = Some(fraction);
            placed = true;
            break;
        }
        if !placed {
            return Err(SceneError::GenerationFailure(format!(
                "no occluder placement met the visibility window after {} retries",
                config.max_occluder_retries
            )));
        }
    }

    // Renders: the clean reference is the unoccluded, uncorrupted target.
    let clean_hits = render_visible(std::slice::from_ref(&target), &config.camera, config.n_rays, render_seed);
    if clean_hits.is_empty() {
        return Err(SceneError::GenerationFailure("clean render produced no points".into()));
    }
    let scene_objects: Vec<SceneObject> = {
        let mut v = vec![target.clone()];
        for (i, occ) in occluders.iter().enumerate() {
            v.push(SceneObject { mesh: occ.kind.mesh(), pose: occ.pose, tag: ObjectTag::Occluder(i) });
        }
        v
    };
    let observed_hits = if occluders.is_empty() {
        clean_hits.clone()
    } else {
        render_visible(&scene_objects, &config.camera, config.n_rays, render_seed)
    };
    if observed_hits.count_tag(ObjectTag::Target) < 32 {
        return Err(SceneError::GenerationFailure(format!(
            "only {} target points visible",
            observed_hits.count_tag(ObjectTag::Target)
        )));
    }

    let clean = PointCloud::new(
        jitter_cloud(&clean_hits.points, config.jitter_sigma, mix_seed(root, 3)),
        "world",
    );
    let observed_base = PointCloud::new(
        jitter_cloud(&observed_hits.points, config.jitter_sigma, mix_seed(root, 4)),
        "world",
    );
    let (observed, corruption) = if case == SceneCase::Noise {
        let spec = config.corruption;
        let corrupted = if config.corruption_along_view {
            corrupt_along_view(&observed_base, &spec, mix_seed(root, 5), config.camera.position())
        } else {
            corrupt(&observed_base, &spec, mix_seed(root, 5))
        };
        (corrupted, Some(spec))
    } else {
        (observed_base, None)
    };

    let mesh_cloud = sample_mesh(&object.mesh(), config.mesh_points, mix_seed(root, 6))?;

    let spec = SceneSpec {
        object,
        gt_pose,
        init_pose,
        occluders,
        viewpoint: config.camera,
        corruption,
        seed,
        n_rays: config.n_rays,
        mesh_points: config.mesh_points,
        jitter_sigma: config.jitter_sigma,
    };
    Ok(SceneSample {
        observed,
        clean,
        mesh_cloud,
        gt_pose,
        init_pose,
        label: case.label(),
        visible_fraction,
        spec,
    })
}

/// Renders the observation a sensor would record from `viewpoint` for an
/// existing scene: ray-cast then per-point jitter.
pub fn rendered_observation(
    spec: &SceneSpec,
    viewpoint: &Viewpoint,
    seed: u64,
) -> TaggedCloud {
    let objects = spec.scene_objects();
    let hits = render_visible(&objects, viewpoint, spec.n_rays, seed);
    TaggedCloud {
        points: jitter_cloud(&hits.points, spec.jitter_sigma, mix_seed(seed, 11)),
        tags: hits.tags,
    }
}

/// Scores every candidate viewpoint by target visibility (deterministic
/// order, ties to the first) and re-renders the observation from the
/// winner.
pub fn next_best_view(
    spec: &SceneSpec,
    candidates: &[Viewpoint],
    seed: u64,
) -> Result<(Viewpoint, TaggedCloud), SceneError> {
    if candidates.is_empty() {
        return Err(SceneError::NoVisibleView);
    }
    let objects = spec.scene_objects();
    let mut best: Option<(usize, f64)> = None;
    for (i, vp) in candidates.iter().enumerate() {
        let score = visibility(&objects, ObjectTag::Target, vp, VISIBILITY_SAMPLES);
        if best.map_or(true, |(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    let (idx, score) = best.expect("candidates non-empty");
    if score <= 0.0 {
        return Err(SceneError::NoVisibleView);
    }
    let winner = candidates[idx];
    let cloud = rendered_observation(spec, &winner, seed);
    Ok((winner, cloud))
}
