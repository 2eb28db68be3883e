//! Built-in parametric object meshes. All shapes are centered near the
//! origin with outward-facing winding; dimensions in meters. The default
//! target library holds the asymmetric shapes (L-bracket, mug) so poses are
//! well-defined under ADD; box and cylinder serve as occluders and test
//! geometry.

use crate::geometry::{Point3, TriangleMesh};

/// Axis-aligned box centered at `center` with full extents (sx, sy, sz).
pub fn box_mesh_at(center: Point3, sx: f64, sy: f64, sz: f64) -> TriangleMesh {
    let (hx, hy, hz) = (sx / 2.0, sy / 2.0, sz / 2.0);
    let v = |dx: f64, dy: f64, dz: f64| {
        Point3::new(center.x + dx * hx, center.y + dy * hy, center.z + dz * hz)
    };
    let vertices = vec![
        v(-1.0, -1.0, -1.0), // 0
        v(1.0, -1.0, -1.0),  // 1
        v(1.0, 1.0, -1.0),   // 2
        v(-1.0, 1.0, -1.0),  // 3
        v(-1.0, -1.0, 1.0),  // 4
        v(1.0, -1.0, 1.0),   // 5
        v(1.0, 1.0, 1.0),    // 6
        v(-1.0, 1.0, 1.0),   // 7
    ];
    let faces = vec![
        [0, 2, 1], // bottom, normal -z
        [0, 3, 2],
        [4, 5, 6], // top, normal +z
        [4, 6, 7],
        [0, 1, 5], // front (-y)
        [0, 5, 4],
        [2, 3, 7], // back (+y)
        [2, 7, 6],
        [1, 2, 6], // right (+x)
        [1, 6, 5],
        [3, 0, 4], // left (-x)
        [3, 4, 7],
    ];
    TriangleMesh::new(vertices, faces).expect("box mesh is valid")
}

pub fn box_mesh(sx: f64, sy: f64, sz: f64) -> TriangleMesh {
    box_mesh_at(Point3::ORIGIN, sx, sy, sz)
}

/// Closed cylinder centered at the origin, axis along z.
pub fn cylinder_mesh(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    assert!(segments >= 3);
    let h = height / 2.0;
    let mut vertices = Vec::with_capacity(segments * 2 + 2);
    for i in 0..segments {
        let a = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
        vertices.push(Point3::new(radius * a.cos(), radius * a.sin(), -h));
    }
    for i in 0..segments {
        let a = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
        vertices.push(Point3::new(radius * a.cos(), radius * a.sin(), h));
    }
    let bottom_center = vertices.len();
    vertices.push(Point3::new(0.0, 0.0, -h));
    let top_center = vertices.len();
    vertices.push(Point3::new(0.0, 0.0, h));

    let mut faces = Vec::with_capacity(segments * 4);
    for i in 0..segments {
        let j = (i + 1) % segments;
        let (b_i, b_j) = (i, j);
        let (t_i, t_j) = (segments + i, segments + j);
        // Side, outward radial normals.
        faces.push([b_i, b_j, t_j]);
        faces.push([b_i, t_j, t_i]);
        // Bottom cap (normal -z) and top cap (normal +z).
        faces.push([bottom_center, b_j, b_i]);
        faces.push([top_center, t_i, t_j]);
    }
    TriangleMesh::new(vertices, faces).expect("cylinder mesh is valid")
}

fn merge(meshes: &[TriangleMesh]) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for m in meshes {
        let offset = vertices.len();
        vertices.extend_from_slice(&m.vertices);
        faces.extend(m.faces.iter().map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]));
    }
    TriangleMesh::new(vertices, faces).expect("merged mesh is valid")
}

/// L-bracket: a horizontal foot with an upright slab at one end. Mirror
/// symmetry only, so the pose is unique under rotations.
pub fn l_bracket_mesh() -> TriangleMesh {
    let foot = box_mesh_at(Point3::new(0.0, 0.0, 0.01), 0.12, 0.06, 0.02);
    let upright = box_mesh_at(Point3::new(-0.05, 0.0, 0.06), 0.02, 0.06, 0.08);
    merge(&[foot, upright])
}

/// Mug-like body: a closed cylinder with a box-beam handle on one side.
pub fn mug_mesh() -> TriangleMesh {
    let body = cylinder_mesh(0.04, 0.10, 24);
    let beam = box_mesh_at(Point3::new(0.065, 0.0, 0.0), 0.012, 0.018, 0.07);
    let stub_top = box_mesh_at(Point3::new(0.05, 0.0, 0.03), 0.03, 0.018, 0.012);
    let stub_bottom = box_mesh_at(Point3::new(0.05, 0.0, -0.03), 0.03, 0.018, 0.012);
    merge(&[body, beam, stub_top, stub_bottom])
}

/// Named object models resolvable from dataset manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Box,
    Cylinder,
    LBracket,
    Mug,
}

impl ObjectKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Box => "box",
            ObjectKind::Cylinder => "cylinder",
            ObjectKind::LBracket => "l_bracket",
            ObjectKind::Mug => "mug",
        }
    }

    pub fn from_name(name: &str) -> Option<ObjectKind> {
        match name {
            "box" => Some(ObjectKind::Box),
            "cylinder" => Some(ObjectKind::Cylinder),
            "l_bracket" => Some(ObjectKind::LBracket),
            "mug" => Some(ObjectKind::Mug),
            _ => None,
        }
    }

    pub fn mesh(self) -> TriangleMesh {
        match self {
            ObjectKind::Box => box_mesh(0.08, 0.11, 0.06),
            ObjectKind::Cylinder => cylinder_mesh(0.035, 0.12, 24),
            ObjectKind::LBracket => l_bracket_mesh(),
            ObjectKind::Mug => mug_mesh(),
        }
    }

    /// Shapes used as pose-estimation targets by default: asymmetric only,
    /// symmetric shapes are excluded from generation.
    pub fn default_targets() -> &'static [ObjectKind] {
        &[ObjectKind::LBracket, ObjectKind::Mug]
    }

    /// Shapes used as occluders.
    pub fn default_occluders() -> &'static [ObjectKind] {
        &[ObjectKind::Box, ObjectKind::Cylinder]
    }
}
