use super::*;
use rand::Rng;

pub(crate) fn random_cloud(n: usize, seed: u64, extent: f64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            Point3::new(
                rng.gen_range(-extent..extent),
                rng.gen_range(-extent..extent),
                rng.gen_range(-extent..extent),
            )
        })
        .collect();
    PointCloud::new(points, "test")
}

pub(crate) fn random_transform(seed: u64, max_trans: f64) -> RigidTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RigidTransform::from_euler(
        rng.gen_range(-max_trans..max_trans),
        rng.gen_range(-max_trans..max_trans),
        rng.gen_range(-max_trans..max_trans),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.gen_range(-1.5..1.5),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    )
    .unwrap()
}

fn unit_square_mesh() -> TriangleMesh {
    TriangleMesh::new(
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

fn unit_cube_mesh() -> TriangleMesh {
    let v = |x: f64, y: f64, z: f64| Point3::new(x, y, z);
    let vertices = vec![
        v(0., 0., 0.),
        v(1., 0., 0.),
        v(1., 1., 0.),
        v(0., 1., 0.),
        v(0., 0., 1.),
        v(1., 0., 1.),
        v(1., 1., 1.),
        v(0., 1., 1.),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [3, 0, 4],
        [3, 4, 7],
    ];
    TriangleMesh::new(vertices, faces).unwrap()
}

#[test]
fn sample_mesh_planar_stays_in_plane() {
    let mesh = unit_square_mesh();
    let cloud = sample_mesh(&mesh, 4, 7).unwrap();
    assert_eq!(cloud.len(), 4);
    for p in &cloud.points {
        assert_eq!(p.z, 0.0);
        assert!((0.0..=1.0).contains(&p.x));
        assert!((0.0..=1.0).contains(&p.y));
    }
}

#[test]
fn sample_mesh_deterministic_per_seed() {
    let mesh = unit_cube_mesh();
    let a = sample_mesh(&mesh, 500, 42).unwrap();
    let b = sample_mesh(&mesh, 500, 42).unwrap();
    assert_eq!(a, b);
    let c = sample_mesh(&mesh, 500, 43).unwrap();
    assert_ne!(a, c);
}

#[test]
fn sample_mesh_counts_follow_area_fractions() {
    // All cube faces have equal area, so each of the 6 sides should get
    // ~1/6 of 60000 samples within 2%.
    let mesh = unit_cube_mesh();
    let cloud = sample_mesh(&mesh, 60000, 9).unwrap();
    let mut side_counts = [0usize; 6];
    for p in &cloud.points {
        let side = if p.z == 0.0 {
            0
        } else if p.z == 1.0 {
            1
        } else if p.y == 0.0 {
            2
        } else if p.y == 1.0 {
            3
        } else if p.x == 1.0 {
            4
        } else {
            5
        };
        side_counts[side] += 1;
    }
    for count in side_counts {
        let frac = count as f64 / 60000.0;
        assert!((frac - 1.0 / 6.0).abs() < 0.02, "side fraction {frac}");
    }
}

#[test]
fn sample_mesh_rejects_empty() {
    let mesh = TriangleMesh { vertices: vec![], faces: vec![] };
    assert!(sample_mesh(&mesh, 4, 0).is_err());
}

#[test]
fn fps_collinear_picks_farthest() {
    let cloud = PointCloud::new(
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(10.0, 0.0, 0.0),
        ],
        "t",
    );
    assert_eq!(farthest_point_sample(&cloud, 2, 0).unwrap(), vec![0, 3]);
}

#[test]
fn fps_exhaustion_is_permutation() {
    let cloud = random_cloud(37, 5, 1.0);
    let mut idx = farthest_point_sample(&cloud, 37, 0).unwrap();
    idx.sort_unstable();
    assert_eq!(idx, (0..37).collect::<Vec<_>>());
}

#[test]
fn fps_matches_brute_force_oracle() {
    // Independent O(kN) re-derivation: at each step recompute every point's
    // min distance to the selected set from scratch.
    let cloud = random_cloud(200, 11, 1.0);
    let got = farthest_point_sample(&cloud, 20, 0).unwrap();
    let mut expected = vec![0usize];
    while expected.len() < 20 {
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for i in 0..cloud.len() {
            if expected.contains(&i) {
                continue;
            }
            let d = expected
                .iter()
                .map(|&s| cloud.points[i].distance_squared(cloud.points[s]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        expected.push(best);
    }
    assert_eq!(got, expected);
}

#[test]
fn fps_min_pairwise_distance_non_increasing() {
    let cloud = random_cloud(120, 3, 1.0);
    let mut prev = f64::INFINITY;
    for k in 2..30 {
        let sel = farthest_point_sample(&cloud, k, 0).unwrap();
        let mut min_pair = f64::INFINITY;
        for i in 0..sel.len() {
            for j in (i + 1)..sel.len() {
                min_pair = min_pair.min(cloud.points[sel[i]].distance(cloud.points[sel[j]]));
            }
        }
        assert!(min_pair <= prev + 1e-12);
        prev = min_pair;
    }
}

#[test]
fn fps_rejects_k_too_large() {
    let cloud = random_cloud(5, 0, 1.0);
    assert!(farthest_point_sample(&cloud, 6, 0).is_err());
}

#[test]
fn k_nearest_self_match() {
    let cloud = random_cloud(50, 2, 1.0);
    let idx = k_nearest(&cloud, cloud.points[17], 1).unwrap();
    assert_eq!(idx, vec![17]);
}

#[test]
fn k_nearest_tie_prefers_lower_index() {
    let cloud = PointCloud::new(
        vec![Point3::new(1.0, 0.0, 0.0), Point3::new(-1.0, 0.0, 0.0)],
        "t",
    );
    let idx = k_nearest(&cloud, Point3::ORIGIN, 2).unwrap();
    assert_eq!(idx, vec![0, 1]);
}

#[test]
fn k_nearest_matches_linear_oracle_small_and_large() {
    for (n, seed) in [(500usize, 21u64), (1500, 22)] {
        let cloud = random_cloud(n, seed, 1.0);
        let queries = random_cloud(50, seed + 100, 1.2);
        for q in &queries.points {
            let got = k_nearest(&cloud, *q, 8).unwrap();
            let expected = k_nearest_linear(&cloud.points, *q, 8);
            assert_eq!(got, expected);
        }
    }
}

#[test]
fn kdtree_nearest_matches_linear() {
    let cloud = random_cloud(800, 31, 1.0);
    let tree = KdTree::build(&cloud.points);
    let queries = random_cloud(200, 32, 1.3);
    for q in &queries.points {
        let (idx, dist) = tree.nearest(*q);
        let expected = k_nearest_linear(&cloud.points, *q, 1)[0];
        assert_eq!(idx, expected);
        assert!((dist - cloud.points[expected].distance(*q)).abs() < 1e-12);
    }
}

#[test]
fn kdtree_handles_duplicate_points() {
    let mut points = vec![Point3::new(0.5, 0.5, 0.5); 10];
    points.push(Point3::new(1.0, 1.0, 1.0));
    let tree = KdTree::build(&points);
    let res = tree.k_nearest(Point3::new(0.5, 0.5, 0.5), 3);
    assert_eq!(res.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn apply_transform_identity_and_translation() {
    let cloud = random_cloud(10, 8, 1.0);
    let out = apply_transform(&RigidTransform::identity(), &cloud);
    assert_eq!(out, cloud);
    let t = RigidTransform::from_translation([0.0, 0.0, 1.0]);
    let single = PointCloud::new(vec![Point3::ORIGIN], "t");
    let moved = apply_transform(&t, &single);
    assert_eq!(moved.points[0], Point3::new(0.0, 0.0, 1.0));
}

#[test]
fn apply_transform_round_trip() {
    let cloud = random_cloud(40, 14, 1.0);
    let t = random_transform(99, 0.5);
    let back = apply_transform(&t.invert(), &apply_transform(&t, &cloud));
    for (a, b) in back.points.iter().zip(&cloud.points) {
        assert!((a.x - b.x).abs() < 1e-12);
        assert!((a.y - b.y).abs() < 1e-12);
        assert!((a.z - b.z).abs() < 1e-12);
    }
}

#[test]
fn apply_transform_is_isometry() {
    let cloud = random_cloud(30, 15, 1.0);
    let t = random_transform(100, 0.5);
    let mapped = apply_transform(&t, &cloud);
    for i in 0..cloud.len() {
        for j in (i + 1)..cloud.len() {
            let d0 = cloud.points[i].distance(cloud.points[j]);
            let d1 = mapped.points[i].distance(mapped.points[j]);
            assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
        }
    }
}

#[test]
fn from_euler_zero_is_identity() {
    let t = RigidTransform::from_euler(0.0, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
    assert_eq!(t, RigidTransform::identity());
}

#[test]
fn from_euler_half_turn_about_x() {
    let t = RigidTransform::from_euler(0.0, 0.0, 0.0, std::f64::consts::PI, 0.0, 0.0).unwrap();
    let p = t.apply_point(Point3::new(0.0, 1.0, 0.0));
    assert!((p.x - 0.0).abs() < 1e-12);
    assert!((p.y + 1.0).abs() < 1e-12);
    assert!(p.z.abs() < 1e-12);
}

#[test]
fn from_euler_round_trip_away_from_gimbal_lock() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let roll = rng.gen_range(-3.0..3.0);
        let pitch = rng.gen_range(-1.4..1.4); // |pitch| < pi/2 - 0.1
        let yaw = rng.gen_range(-3.0..3.0);
        let t = RigidTransform::from_euler(0.1, -0.2, 0.3, roll, pitch, yaw).unwrap();
        let (r2, p2, y2) = t.euler_angles();
        assert!((roll - r2).abs() < 1e-9, "roll {roll} vs {r2}");
        assert!((pitch - p2).abs() < 1e-9);
        assert!((yaw - y2).abs() < 1e-9);
    }
}

#[test]
fn from_euler_rejects_non_finite() {
    assert!(RigidTransform::from_euler(f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0).is_err());
}

#[test]
fn from_euler_always_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let t = RigidTransform::from_euler(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
        )
        .unwrap();
        assert!(t.is_valid());
    }
}

#[test]
fn compose_and_invert_group_laws() {
    let id = RigidTransform::identity();
    assert_eq!(id.invert(), id);
    let t = random_transform(55, 0.4);
    let composed = t.compose(&id);
    assert!(composed.translation_distance_to(&t) < 1e-15);
    for seed in 0..50u64 {
        let t = random_transform(seed, 0.6);
        let round = t.invert().compose(&t);
        assert!(round.translation_distance_to(&RigidTransform::identity()) < 1e-12);
        assert!(round.rotation_angle_to(&RigidTransform::identity()) < 1e-7);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((round.rotation[i][j] - expect).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn compose_applies_second_argument_first() {
    let a = RigidTransform::from_translation([1.0, 0.0, 0.0]);
    let b = RigidTransform::from_euler(0.0, 0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2)
        .unwrap();
    // (a∘b)(p) = a(b(p)): rotate then translate.
    let p = Point3::new(1.0, 0.0, 0.0);
    let out = a.compose(&b).apply_point(p);
    assert!((out.x - 1.0).abs() < 1e-12);
    assert!((out.y - 1.0).abs() < 1e-12);
}

#[test]
fn mesh_rejects_bad_faces() {
    let verts = vec![Point3::ORIGIN, Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)];
    assert!(TriangleMesh::new(verts.clone(), vec![[0, 1, 5]]).is_err());
    assert!(TriangleMesh::new(verts, vec![[0, 1, 1]]).is_err());
}
