use poseguard_core::boicp::*;
use poseguard_core::metrics::add_error;
use poseguard_core::registration::{icp, IcpConfig};
use poseguard_core::simscene::{generate, GenConfig, ObjectKind, SceneCase};

#[test]
#[ignore]
fn sweep() {
    let gen = GenConfig { n_rays: 3072, mesh_points: 512, ..GenConfig::default() };
    let scenes: Vec<_> = (0..10u64)
        .map(|i| {
            let kind = if i % 2 == 0 { ObjectKind::LBracket } else { ObjectKind::Mug };
            generate(SceneCase::BadInit, kind, 100 + i, &gen).unwrap()
        })
        .collect();
    let pi = std::f64::consts::PI;
    let full = SearchBounds::default();
    let tabletop = SearchBounds {
        min: [-0.5, -0.5, -0.15, -0.4, -0.4, -pi],
        max: [0.5, 0.5, 0.15, 0.4, 0.4, pi],
    };
    let sharp = ObjectiveConfig {
        fitness_tau: 0.005,
        rmse_tau: 0.005,
        refine: Some(IcpConfig::default()),
    };
    for (tag, bounds, n0, ni, scoring) in [
        ("table60/sharp", tabletop, 15usize, 45usize, sharp),
        ("table120/sharp", tabletop, 30, 90, sharp),
        ("full120/sharp", full, 30, 90, sharp),
        ("table120/default", tabletop, 30, 90, ObjectiveConfig::default()),
    ] {
        let started = std::time::Instant::now();
        let mut successes = 0;
        for (i, s) in scenes.iter().enumerate() {
            let bo = BoConfig { n_initial_random: n0, n_iterations: ni, seed: 1000 + i as u64, scoring, ..BoConfig::default() };
            let loose = IcpConfig { correspondence_max_dist: 0.02, ..IcpConfig::default() };
            let (best, _) = bo_icp(&s.mesh_cloud, &s.observed, &bounds, &bo, &loose).unwrap();
            let refined = icp(&s.mesh_cloud, &s.observed, &best.transform, &IcpConfig::default())
                .map(|r| r.transform)
                .unwrap_or(best.transform);
            let add = add_error(&s.mesh_cloud, &s.gt_pose, &refined);
            if add < 0.01 { successes += 1; }
        }
        println!("{tag}: {successes}/10 in {:?}", started.elapsed());
    }
}

#[test]
#[ignore]
fn diagnose_objective() {
    let gen = GenConfig { n_rays: 3072, mesh_points: 512, ..GenConfig::default() };
    let pi = std::f64::consts::PI;
    let tabletop = SearchBounds {
        min: [-0.5, -0.5, -0.15, -0.4, -0.4, -pi],
        max: [0.5, 0.5, 0.15, 0.4, 0.4, pi],
    };
    for i in 0..10u64 {
        let kind = if i % 2 == 0 { ObjectKind::LBracket } else { ObjectKind::Mug };
        let s = generate(SceneCase::BadInit, kind, 100 + i, &gen).unwrap();
        let loose = IcpConfig { correspondence_max_dist: 0.02, ..IcpConfig::default() };
        let bo = BoConfig { n_initial_random: 15, n_iterations: 45, seed: 1000 + i, ..BoConfig::default() };
        let (coarse, trace) = bo_icp(&s.mesh_cloud, &s.observed, &tabletop, &bo, &loose).unwrap();
        let refined = icp(&s.mesh_cloud, &s.observed, &coarse.transform, &IcpConfig::default())
            .map(|r| r.transform).unwrap_or(coarse.transform);
        let add = add_error(&s.mesh_cloud, &s.gt_pose, &refined);
        // objective at the true pose
        let (v_true, _, _) = objective(&s.mesh_cloud, &s.observed, &s.gt_pose, &loose).unwrap();
        println!(
            "scene {i} ({kind:?}): found obj {:+.3} true obj {:+.3} ADD {:.4} {}",
            trace.best().objective, v_true, add, if add < 0.01 { "OK" } else { "FAIL" }
        );
    }
}

#[test]
#[ignore]
fn objective_variants() {
    use poseguard_core::geometry::apply_transform;
    use poseguard_core::metrics::{fitness, rmse_inlier, directed_distance};
    let gen = GenConfig { n_rays: 3072, mesh_points: 512, ..GenConfig::default() };
    let pi = std::f64::consts::PI;
    let tabletop = SearchBounds {
        min: [-0.5, -0.5, -0.15, -0.4, -0.4, -pi],
        max: [0.5, 0.5, 0.15, 0.4, 0.4, pi],
    };
    for i in [7u64, 8, 0, 5] {
        let kind = if i % 2 == 0 { ObjectKind::LBracket } else { ObjectKind::Mug };
        let s = generate(SceneCase::BadInit, kind, 100 + i, &gen).unwrap();
        let loose = IcpConfig { correspondence_max_dist: 0.02, ..IcpConfig::default() };
        let bo = BoConfig { n_initial_random: 15, n_iterations: 45, seed: 1000 + i, ..BoConfig::default() };
        let (coarse, _) = bo_icp(&s.mesh_cloud, &s.observed, &tabletop, &bo, &loose).unwrap();
        // tight-refine both candidate and truth the same way
        let tight = IcpConfig::default();
        let refine = |t: &poseguard_core::geometry::RigidTransform| {
            icp(&s.mesh_cloud, &s.observed, t, &tight).map(|r| r.transform).unwrap_or(*t)
        };
        for (tag, t) in [("found", refine(&coarse.transform)), ("true", refine(&s.gt_pose))] {
            let aligned = apply_transform(&t, &s.mesh_cloud);
            let f2 = fitness(&aligned, &s.observed, 0.02).unwrap();
            let f1 = fitness(&aligned, &s.observed, 0.01).unwrap();
            let f5 = fitness(&aligned, &s.observed, 0.005).unwrap();
            let r1 = rmse_inlier(&aligned, &s.observed, 0.01).unwrap().value_or_sentinel(0.01);
            let r5 = rmse_inlier(&aligned, &s.observed, 0.005).unwrap().value_or_sentinel(0.005);
            let d_sm = directed_distance(&s.observed, &aligned).unwrap();
            let add = add_error(&s.mesh_cloud, &s.gt_pose, &t);
            println!(
                "scene {i} {tag}: F2 {f2:.3} F1 {f1:.3} F05 {f5:.3} R1/t {:.3} R05/t {:.3} Dsm {d_sm:.4} ADD {add:.4}",
                r1 / 0.01, r5 / 0.005
            );
        }
    }
}

#[test]
#[ignore]
fn two_phase() {
    let gen = GenConfig { n_rays: 3072, mesh_points: 512, ..GenConfig::default() };
    let scenes: Vec<_> = (0..20u64)
        .map(|i| {
            let kind = if i % 2 == 0 { ObjectKind::LBracket } else { ObjectKind::Mug };
            generate(SceneCase::BadInit, kind, 100 + i, &gen).unwrap()
        })
        .collect();
    let pi = std::f64::consts::PI;
    let tabletop = SearchBounds {
        min: [-0.5, -0.5, -0.15, -0.4, -0.4, -pi],
        max: [0.5, 0.5, 0.15, 0.4, 0.4, pi],
    };
    let sharp = ObjectiveConfig {
        fitness_tau: 0.005,
        rmse_tau: 0.005,
        refine: Some(IcpConfig::default()),
    };
    for (tag, n0, ni, top_k) in [
        ("60+top8", 15usize, 45usize, 8usize),
        ("90+top10", 20, 70, 10),
    ] {
        let started = std::time::Instant::now();
        let mut successes = 0;
        for (i, s) in scenes.iter().enumerate() {
            let bo = BoConfig { n_initial_random: n0, n_iterations: ni, seed: 1000 + i as u64, ..BoConfig::default() };
            let loose = IcpConfig { correspondence_max_dist: 0.02, ..IcpConfig::default() };
            let (_, trace) = bo_icp(&s.mesh_cloud, &s.observed, &tabletop, &bo, &loose).unwrap();
            // Re-score the top-k exploration candidates with the sharp objective.
            let mut order: Vec<usize> = (0..trace.evaluations.len()).collect();
            order.sort_by(|&a, &b| trace.evaluations[b].objective.partial_cmp(&trace.evaluations[a].objective).unwrap());
            let mut best_t = trace.best().icp_result.transform;
            let mut best_v = f64::NEG_INFINITY;
            for &idx in order.iter().take(top_k) {
                let cand = &trace.evaluations[idx];
                let init = poseguard_core::geometry::RigidTransform::from_euler(
                    cand.params[0], cand.params[1], cand.params[2],
                    cand.params[3], cand.params[4], cand.params[5]).unwrap();
                let (v, _, r) = objective_with(&s.mesh_cloud, &s.observed, &init, &loose, &sharp).unwrap();
                if v > best_v { best_v = v; best_t = r.transform; }
            }
            let add = add_error(&s.mesh_cloud, &s.gt_pose, &best_t);
            if add < 0.01 { successes += 1; }
        }
        println!("{tag}: {successes}/10 in {:?}", started.elapsed());
    }
}
