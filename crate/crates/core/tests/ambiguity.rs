mod oracles;

use proptest::prelude::*;
use surffill::ambiguity::{ambiguity_scores, compute_ambiguity, init_surfels, initial_scale, structural_downsample};
use surffill::types::{PipelineConfig, PointCloud, Vec3};

#[test]
fn scores_match_exhaustive_search() {
    let pts = oracles::uniform_points(1500, 11);
    for k in [1, 3, 5] {
        let got = ambiguity_scores(&pts, k, 0.02, 1000.0).unwrap();
        let want = oracles::ambiguity(&pts, k, 0.02);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9 * w.abs().max(1e-12), "{g} vs {w}");
        }
    }
}

#[test]
fn grid_interior_scores_one() {
    let d = 0.01;
    let pts: Vec<Vec3> = (0..15)
        .flat_map(|i| (0..15).map(move |j| Vec3::new(i as f64 * d, j as f64 * d, 0.0)))
        .collect();
    let cloud = compute_ambiguity(&PointCloud::from_positions(&pts, d), 4, 1000.0, 1.1).unwrap();
    for (p, q) in cloud.points.iter().zip(&pts) {
        let border = [q.x, q.y].iter().any(|c| *c < 0.5 * d || *c > 13.5 * d);
        if !border {
            assert!((p.ambiguity - 1.0).abs() < 1e-12);
            assert!(!p.high_ambiguity);
        }
    }
}

#[test]
fn a_hole_raises_its_rim() {
    let d = 0.01;
    let pts: Vec<Vec3> = (0..30)
        .flat_map(|i| (0..30).map(move |j| Vec3::new(i as f64 * d, j as f64 * d, 0.0)))
        .filter(|p| (p - Vec3::new(0.15, 0.15, 0.0)).norm() > 0.05)
        .collect();
    let a = ambiguity_scores(&pts, 3, d, 1000.0).unwrap();
    let rim: Vec<f64> = pts
        .iter()
        .zip(&a)
        .filter(|(p, _)| ((*p - Vec3::new(0.15, 0.15, 0.0)).norm() - 0.055).abs() < 0.006)
        .map(|(_, a)| *a)
        .collect();
    assert!(!rim.is_empty());
    assert!(rim.iter().all(|&r| r >= 1.0 - 1e-9));
    assert!(rim.iter().cloned().fold(0.0, f64::max) > 1.0 + 1e-3);
}

#[test]
fn surfels_start_flat_on_a_plane() {
    let d = 0.01;
    let pts: Vec<Vec3> = (0..10)
        .flat_map(|i| (0..10).map(move |j| Vec3::new(i as f64 * d, j as f64 * d, 0.3)))
        .collect();
    let cfg = PipelineConfig::default();
    let cloud = compute_ambiguity(&PointCloud::from_positions(&pts, d), 3, 1000.0, cfg.tau).unwrap();
    let model = init_surfels(&cloud, &cfg, &[]).unwrap();
    assert_eq!(model.len(), pts.len());
    for (s, p) in model.surfels.iter().zip(&cloud.points) {
        assert!(s.normal().z.abs() > 1.0 - 1e-9);
        assert_eq!(s.center, p.position);
        assert_eq!(s.opacity, cfg.initial_opacity);
        assert!((s.scale_u - initial_scale(p.ambiguity, d, true)).abs() < 1e-15);
        assert!((s.tangent_u.dot(&s.tangent_v)).abs() < 1e-12);
    }
}

#[test]
fn scale_follows_square_root_of_ambiguity() {
    assert!((initial_scale(2.0, 0.01, true) - 0.01).abs() < 1e-15);
    assert!((initial_scale(2.0, 0.01, false) - 1.0).abs() < 1e-15);
    assert!(initial_scale(0.0, 0.01, true) > 0.0);
}

fn cloud_strategy() -> impl Strategy<Value = Vec<Vec3>> {
    proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 6..80)
        .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn density_scale_cancels(pts in cloud_strategy(), f in 1e-3..1e4f64) {
        let a = ambiguity_scores(&pts, 3, 0.05, 1.0).unwrap();
        let b = ambiguity_scores(&pts, 3, 0.05, f).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.max(1e-9));
        }
    }

    #[test]
    fn scores_are_similarity_invariant(pts in cloud_strategy(), s in 0.1..10.0f64, t in -5.0..5.0f64) {
        let moved: Vec<Vec3> = pts.iter().map(|p| p * s + Vec3::repeat(t)).collect();
        let a = ambiguity_scores(&pts, 3, 0.05, 1000.0).unwrap();
        let b = ambiguity_scores(&moved, 3, 0.05 * s, 1000.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-7 * x.max(1e-9));
        }
    }

    #[test]
    fn downsampling_never_drops_high_ambiguity(pts in cloud_strategy(), seed in any::<u64>(), keep in 0.01..1.0f64) {
        let cloud = compute_ambiguity(&PointCloud::from_positions(&pts, 0.05), 3, 1000.0, 2.0).unwrap();
        let down = structural_downsample(&cloud, 2.0, keep, seed).unwrap();
        let high = cloud.points.iter().filter(|p| p.ambiguity > 2.0).count();
        prop_assert_eq!(down.points.iter().filter(|p| p.ambiguity > 2.0).count(), high);
        prop_assert!(down.points.iter().all(|p| cloud.points.contains(p)));
        let again = structural_downsample(&cloud, 2.0, keep, seed).unwrap();
        prop_assert_eq!(down.points, again.points);
    }
}
