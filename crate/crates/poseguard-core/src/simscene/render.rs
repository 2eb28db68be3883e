//! Ray-cast rendering of triangle-soup scenes: seeded rays from a viewpoint
//! toward the scene, nearest-hit per ray, points tagged by the object they
//! hit. Also surface-sample visibility with the back-face rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud, RigidTransform, TriangleMesh};

/// Hemisphere camera position plus a look-at point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub radius: f64,
    pub azimuth: f64,
    /// Elevation above the workspace plane, in (0, π/2].
    pub elevation: f64,
    pub look_at: Point3,
}

impl Viewpoint {
    pub fn new(radius: f64, azimuth: f64, elevation: f64) -> Viewpoint {
        Viewpoint { radius, azimuth, elevation, look_at: Point3::ORIGIN }
    }

    pub fn position(&self) -> Point3 {
        Point3::new(
            self.look_at.x + self.radius * self.elevation.cos() * self.azimuth.cos(),
            self.look_at.y + self.radius * self.elevation.cos() * self.azimuth.sin(),
            self.look_at.z + self.radius * self.elevation.sin(),
        )
    }
}

/// Who a rendered point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectTag {
    Target,
    Occluder(usize),
}

/// One posed mesh in a scene.
#[derive(Debug, Clone)]
pub struct SceneObject {
    pub mesh: TriangleMesh,
    pub pose: RigidTransform,
    pub tag: ObjectTag,
}

/// Rendered points with per-point object tags; `cloud()` drops the tags.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedCloud {
    pub points: Vec<Point3>,
    pub tags: Vec<ObjectTag>,
}

impl TaggedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cloud(&self, frame_tag: &str) -> PointCloud {
        PointCloud::new(self.points.clone(), frame_tag)
    }

    pub fn count_tag(&self, tag: ObjectTag) -> usize {
        self.tags.iter().filter(|t| **t == tag).count()
    }
}

/// Möller–Trumbore ray/triangle intersection; returns the ray parameter t.
fn ray_triangle(origin: Point3, dir: Point3, a: Point3, b: Point3, c: Point3) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = b.sub(a);
    let e2 = c.sub(a);
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = origin.sub(a);
    let u = s.dot(p) * inv_det;
    if !(-EPS..=1.0 + EPS).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = dir.dot(q) * inv_det;
    if v < -EPS || u + v > 1.0 + EPS {
        return None;
    }
    let t = e2.dot(q) * inv_det;
    if t > EPS {
        Some(t)
    } else {
        None
    }
}

/// Pre-transformed triangle list for intersection queries.
pub(crate) struct TriangleSoup {
    triangles: Vec<([Point3; 3], ObjectTag)>,
}

impl TriangleSoup {
    pub fn new(objects: &[SceneObject]) -> TriangleSoup {
        let mut triangles = Vec::new();
        for obj in objects {
            let world = obj.mesh.transformed(&obj.pose);
            for f in &world.faces {
                triangles.push((
                    [world.vertices[f[0]], world.vertices[f[1]], world.vertices[f[2]]],
                    obj.tag,
                ));
            }
        }
        TriangleSoup { triangles }
    }

    /// Nearest hit along the ray: (t, hit point, tag).
    pub fn nearest_hit(&self, origin: Point3, dir: Point3) -> Option<(f64, Point3, ObjectTag)> {
        let mut best: Option<(f64, ObjectTag)> = None;
        for (tri, tag) in &self.triangles {
            if let Some(t) = ray_triangle(origin, dir, tri[0], tri[1], tri[2]) {
                if best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, *tag));
                }
            }
        }
        best.map(|(t, tag)| (t, origin.add(dir.scale(t)), tag))
    }

    /// True when the open segment from `origin` toward `target` is blocked.
    pub fn segment_blocked(&self, origin: Point3, target: Point3) -> bool {
        let dir = target.sub(origin);
        let dist = dir.norm();
        if dist < 1e-12 {
            return false;
        }
        let dir = dir.scale(1.0 / dist);
        for (tri, _) in &self.triangles {
            if let Some(t) = ray_triangle(origin, dir, tri[0], tri[1], tri[2]) {
                if t < dist - 1e-9 {
                    return true;
                }
            }
        }
        false
    }

    fn bounding_sphere(&self) -> (Point3, f64) {
        let mut centroid = Point3::ORIGIN;
        let mut count = 0usize;
        for (tri, _) in &self.triangles {
            for v in tri {
                centroid = centroid.add(*v);
                count += 1;
            }
        }
        if count == 0 {
            return (Point3::ORIGIN, 0.1);
        }
        centroid = centroid.scale(1.0 / count as f64);
        let mut radius = 0.0f64;
        for (tri, _) in &self.triangles {
            for v in tri {
                radius = radius.max(v.distance(centroid));
            }
        }
        (centroid, radius * 1.05)
    }
}

/// Casts `n_rays` seeded rays from the viewpoint toward the scene's
/// bounding sphere and returns the nearest intersection of each, tagged by
/// the object hit. Deterministic per seed; exact intersection points (no
/// sensor jitter).
pub fn render_visible(
    objects: &[SceneObject],
    viewpoint: &Viewpoint,
    n_rays: usize,
    seed: u64,
) -> TaggedCloud {
    assert!(n_rays >= 1);
    let soup = TriangleSoup::new(objects);
    let (center, radius) = soup.bounding_sphere();
    let eye = viewpoint.position();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut tags = Vec::new();
    for _ in 0..n_rays {
        // Aim at a uniform point inside the bounding sphere.
        let target = loop {
            let candidate = Point3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if candidate.norm_squared() <= 1.0 {
                break center.add(candidate.scale(radius));
            }
        };
        let dir = target.sub(eye).normalized();
        if let Some((_, hit, tag)) = soup.nearest_hit(eye, dir) {
            points.push(hit);
            tags.push(tag);
        }
    }
    TaggedCloud { points, tags }
}

/// Fraction of the target's surface-sample points that face the camera and
/// reach it unblocked. The sample set depends only on the target mesh and
/// `n_samples`, so scores at different viewpoints are directly comparable.
pub fn visibility(
    objects: &[SceneObject],
    target_tag: ObjectTag,
    viewpoint: &Viewpoint,
    n_samples: usize,
) -> f64 {
    let target = objects.iter().find(|o| o.tag == target_tag);
    let Some(target) = target else { return 0.0 };
    let soup = TriangleSoup::new(objects);
    let eye = viewpoint.position();

    // Seeded surface samples with their face normals, in the mesh frame.
    let fixed_seed = 0x5eed_u64 ^ (n_samples as u64);
    let samples = surface_samples_with_normals(&target.mesh, n_samples, fixed_seed);
    let mut visible = 0usize;
    for (p, n) in &samples {
        let world_p = target.pose.apply_point(*p);
        let world_n = target.pose.rotate_vector(*n);
        let to_eye = eye.sub(world_p);
        if world_n.dot(to_eye) <= 0.0 {
            continue;
        }
        // Nudge off the surface so the sample's own face doesn't block it.
        let origin = world_p.add(to_eye.normalized().scale(1e-6));
        if !soup.segment_blocked(origin, eye) {
            visible += 1;
        }
    }
    visible as f64 / n_samples as f64
}

/// Area-weighted surface samples paired with their face normals.
pub(crate) fn surface_samples_with_normals(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Vec<(Point3, Point3)> {
    crate::geometry::sample_mesh_with_faces(mesh, n, seed)
        .expect("valid mesh")
        .into_iter()
        .map(|(p, face)| (p, mesh.face_normal(face)))
        .collect()
}
