//! Core 3-D primitives: points, clouds, rigid transforms, mesh sampling,
//! farthest-point sampling and nearest-neighbor search.

mod kdtree;
mod io;

pub use io::{read_obj, read_xyz, write_xyz, FormatError};
pub use kdtree::KdTree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Orthonormality / determinant tolerance for [`RigidTransform`] validation.
pub const ROTATION_TOL: f64 = 1e-9;

/// Cloud size above which nearest-neighbor queries go through the kd-tree
/// instead of a linear scan.
pub const SPATIAL_INDEX_THRESHOLD: usize = 1000;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A point in 3-D space, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn add(self, other: Point3) -> Point3 {
        Point3::new(self.x + other.x, self.y + other.y, self.z + other.z)
    }

    pub fn sub(self, other: Point3) -> Point3 {
        Point3::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    pub fn scale(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Point3) -> f64 {
        self.sub(other).norm()
    }

    pub fn distance_squared(self, other: Point3) -> f64 {
        self.sub(other).norm_squared()
    }

    pub fn normalized(self) -> Point3 {
        let n = self.norm();
        if n > 0.0 {
            self.scale(1.0 / n)
        } else {
            self
        }
    }
}

/// Ordered list of points with a frame label. Ordering is stable: every
/// operation that maps a cloud preserves it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_tag: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame_tag: impl Into<String>) -> Self {
        Self { points, frame_tag: frame_tag.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        let mut c = Point3::ORIGIN;
        for p in &self.points {
            c = c.add(*p);
        }
        if self.points.is_empty() {
            c
        } else {
            c.scale(1.0 / self.points.len() as f64)
        }
    }
}

/// An SE(3) element. `rotation` is row-major; the invariants RᵀR = I and
/// det(R) = +1 hold within [`ROTATION_TOL`] for every constructed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0, 0.0, 0.0],
        }
    }

    /// Builds a transform from parts, validating the rotation invariants.
    pub fn from_parts(
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    ) -> Result<Self, GeometryError> {
        let t = Self { rotation, translation };
        if !t.is_valid() {
            return Err(GeometryError::InvalidInput(
                "rotation is not special orthogonal within tolerance".into(),
            ));
        }
        Ok(t)
    }

    /// Translation-only transform.
    pub fn from_translation(translation: [f64; 3]) -> Self {
        Self { rotation: Self::identity().rotation, translation }
    }

    /// Extrinsic x-y-z convention: rotation = Rz(yaw) · Ry(pitch) · Rx(roll)
    /// applied to column vectors; translation = (x, y, z).
    pub fn from_euler(
        x: f64,
        y: f64,
        z: f64,
        roll: f64,
        pitch: f64,
        yaw: f64,
    ) -> Result<Self, GeometryError> {
        for v in [x, y, z, roll, pitch, yaw] {
            if !v.is_finite() {
                return Err(GeometryError::InvalidInput(
                    "non-finite euler parameter".into(),
                ));
            }
        }
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        // Rz(yaw) * Ry(pitch) * Rx(roll), expanded.
        let rotation = [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ];
        Ok(Self { rotation, translation: [x, y, z] })
    }

    /// Extracts (roll, pitch, yaw) for the Rz·Ry·Rx convention. Valid away
    /// from gimbal lock (|pitch| near π/2).
    pub fn euler_angles(&self) -> (f64, f64, f64) {
        let r = &self.rotation;
        let pitch = (-r[2][0]).asin();
        let roll = r[2][1].atan2(r[2][2]);
        let yaw = r[1][0].atan2(r[0][0]);
        (roll, pitch, yaw)
    }

    pub fn is_valid(&self) -> bool {
        let r = &self.rotation;
        for row in r {
            for v in row {
                if !v.is_finite() {
                    return false;
                }
            }
        }
        for v in &self.translation {
            if !v.is_finite() {
                return false;
            }
        }
        // RᵀR = I within tolerance, entry-wise.
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += r[k][i] * r[k][j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > ROTATION_TOL {
                    return false;
                }
            }
        }
        (self.det() - 1.0).abs() <= ROTATION_TOL
    }

    fn det(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    pub fn apply_point(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        let t = &self.translation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + t[0],
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + t[1],
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + t[2],
        )
    }

    /// Rotates a direction vector (no translation).
    pub fn rotate_vector(&self, v: Point3) -> Point3 {
        let r = &self.rotation;
        Point3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    /// `compose(A, B)` applies B first, then A: (A∘B)(p) = A(B(p)).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    rotation[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        let bt = Point3::from_array(other.translation);
        let t = self.rotate_vector(bt);
        let translation = [
            t.x + self.translation[0],
            t.y + self.translation[1],
            t.z + self.translation[2],
        ];
        RigidTransform { rotation, translation }
    }

    pub fn invert(&self) -> RigidTransform {
        let r = &self.rotation;
        let rotation = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = Point3::from_array(self.translation);
        let inv = RigidTransform { rotation, translation: [0.0; 3] };
        let rt = inv.rotate_vector(t);
        RigidTransform { rotation, translation: [-rt.x, -rt.y, -rt.z] }
    }

    /// Rodrigues rotation about a unit axis by `angle` radians, with zero
    /// translation.
    pub fn from_axis_angle(axis: Point3, angle: f64) -> RigidTransform {
        let a = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let rotation = [
            [c + a.x * a.x * t, a.x * a.y * t - a.z * s, a.x * a.z * t + a.y * s],
            [a.y * a.x * t + a.z * s, c + a.y * a.y * t, a.y * a.z * t - a.x * s],
            [a.z * a.x * t - a.y * s, a.z * a.y * t + a.x * s, c + a.z * a.z * t],
        ];
        RigidTransform { rotation, translation: [0.0; 3] }
    }

    /// Rotation angle in radians of the relative rotation between two
    /// transforms (useful when bounding pose offsets).
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.invert().compose(other);
        let tr = rel.rotation[0][0] + rel.rotation[1][1] + rel.rotation[2][2];
        ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    pub fn translation_distance_to(&self, other: &RigidTransform) -> f64 {
        Point3::from_array(self.translation).distance(Point3::from_array(other.translation))
    }
}

/// Maps every point of the cloud through `t`, preserving order.
pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply_point(*p)).collect(),
        frame_tag: cloud.frame_tag.clone(),
    }
}

/// Triangle mesh: vertices plus triangular faces (vertex-index triples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Validates face indices and rejects zero-area triangles.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= vertices.len() {
                    return Err(GeometryError::InvalidInput(format!(
                        "face {fi} references vertex {i} out of range ({} vertices)",
                        vertices.len()
                    )));
                }
            }
            let area = triangle_area(vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            if !(area > 0.0) {
                return Err(GeometryError::InvalidInput(format!(
                    "face {fi} has zero area"
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face];
        triangle_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Unit normal of a face from its winding order.
    pub fn face_normal(&self, face: usize) -> Point3 {
        let [a, b, c] = self.faces[face];
        let u = self.vertices[b].sub(self.vertices[a]);
        let v = self.vertices[c].sub(self.vertices[a]);
        u.cross(v).normalized()
    }

    /// Mesh with every vertex mapped through `t`.
    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|p| t.apply_point(*p)).collect(),
            faces: self.faces.clone(),
        }
    }
}

pub fn triangle_area(a: Point3, b: Point3, c: Point3) -> f64 {
    b.sub(a).cross(c.sub(a)).norm() * 0.5
}

/// Samples `n` points uniformly by surface area: area-weighted triangle
/// choice, then uniform barycentric coordinates. Deterministic per seed.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud, GeometryError> {
    let points = sample_mesh_with_faces(mesh, n, seed)?
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    Ok(PointCloud::new(points, "mesh"))
}

/// As [`sample_mesh`], but each point is paired with the index of the face
/// it was drawn from.
pub fn sample_mesh_with_faces(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<Vec<(Point3, usize)>, GeometryError> {
    if n == 0 {
        return Err(GeometryError::InvalidInput("sample count must be >= 1".into()));
    }
    if mesh.faces.is_empty() {
        return Err(GeometryError::InvalidInput("mesh has no faces".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(GeometryError::InvalidInput("mesh surface area is zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen_range(0.0..total);
        let face = cumulative.partition_point(|&c| c <= u).min(mesh.faces.len() - 1);
        let [ia, ib, ic] = mesh.faces[face];
        let (a, b, c) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let s = r1.sqrt();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        points.push((a.scale(wa).add(b.scale(wb)).add(c.scale(wc)), face));
    }
    Ok(points)
}

/// Greedy farthest-point sampling. The first index is `start_index`; each
/// subsequent pick maximizes the minimum distance to the already-selected
/// set, ties broken by lowest index.
pub fn farthest_point_sample(
    cloud: &PointCloud,
    k: usize,
    start_index: usize,
) -> Result<Vec<usize>, GeometryError> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(GeometryError::InvalidInput(format!(
            "fps count {k} out of range for cloud of {n} points"
        )));
    }
    if start_index >= n {
        return Err(GeometryError::InvalidInput(format!(
            "fps start index {start_index} out of range for cloud of {n} points"
        )));
    }
    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = start_index;
    selected.push(current);
    taken[current] = true;
    for _ in 1..k {
        let cp = cloud.points[current];
        let mut best = usize::MAX;
        let mut best_dist = -1.0;
        for (i, p) in cloud.points.iter().enumerate() {
            let d = cp.distance_squared(*p);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if !taken[i] && min_dist[i] > best_dist {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
        selected.push(current);
        taken[current] = true;
    }
    Ok(selected)
}

/// Indices of the k nearest points to `query`, sorted ascending by distance,
/// distance ties broken by lowest index. Uses the kd-tree above
/// [`SPATIAL_INDEX_THRESHOLD`] points.
pub fn k_nearest(cloud: &PointCloud, query: Point3, k: usize) -> Result<Vec<usize>, GeometryError> {
    let n = cloud.len();
    if n == 0 {
        return Err(GeometryError::InvalidInput("empty cloud".into()));
    }
    if k == 0 || k > n {
        return Err(GeometryError::InvalidInput(format!(
            "k = {k} out of range for cloud of {n} points"
        )));
    }
    if n > SPATIAL_INDEX_THRESHOLD {
        let tree = KdTree::build(&cloud.points);
        Ok(tree.k_nearest(query, k).into_iter().map(|(i, _)| i).collect())
    } else {
        Ok(k_nearest_linear(&cloud.points, query, k))
    }
}

/// Exhaustive-scan k-NN with the same tie rule; the correctness oracle for
/// the kd-tree path.
pub fn k_nearest_linear(points: &[Point3], query: Point3, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let da = points[a].distance_squared(query);
        let db = points[b].distance_squared(query);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

#[cfg(test)]
mod tests;
