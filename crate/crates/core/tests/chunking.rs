mod oracles;

use proptest::prelude::*;
use rand::Rng;
use surffill::chunking::{finalize_chunk, hulls_intersect, in_frustum, make_chunks, merge_chunks, ConvexHull};
use surffill::types::{Aabb, CameraView, Grid, Intrinsics, PointCloud, Pose, Surfel, SurfelModel, Vec3};

fn view(id: &str, eye: Vec3, target: Vec3) -> CameraView {
    CameraView::new(id, Intrinsics::from_fov(16, 12, 0.9), Pose::look_at(eye, target, Vec3::z()), Grid::filled(16, 12, Vec3::zeros()))
}

fn membership(n: usize, chunks: &[surffill::chunking::Chunk]) -> Vec<usize> {
    let mut count = vec![0; n];
    for c in chunks {
        for &i in &c.point_indices {
            count[i] += 1;
        }
    }
    count
}

fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
    proptest::collection::vec((-2.0..2.0f64, -1.0..3.0f64, 0.0..0.5f64), 1..300).prop_map(|v| {
        let pts: Vec<Vec3> = v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        PointCloud::from_positions(&pts, 0.01)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cells_partition_the_cloud_without_extension(cloud in cloud_strategy(), cell in 0.05..3.0f64) {
        let chunks = make_chunks(&cloud, &[], cell, 0.0, 0.0).unwrap();
        prop_assert!(membership(cloud.len(), &chunks).iter().all(|&c| c == 1));
        for c in &chunks {
            for &i in &c.point_indices {
                prop_assert!(c.owns(&cloud.points[i].position));
            }
        }
    }

    #[test]
    fn extension_only_adds_points(cloud in cloud_strategy(), cell in 0.1..3.0f64, ext in 0.0..1.0f64) {
        let base = make_chunks(&cloud, &[], cell, 0.0, 0.0).unwrap();
        let grown = make_chunks(&cloud, &[], cell, 0.0, ext).unwrap();
        for c in &base {
            let g = grown.iter().find(|g| g.id == c.id).unwrap();
            prop_assert!(c.point_indices.iter().all(|i| g.point_indices.contains(i)));
            let grow = ext * cell * 0.5;
            for &i in &g.point_indices {
                let p = cloud.points[i].position;
                prop_assert!(p.x >= g.bbox.min.x - grow - 1e-12 && p.x <= g.bbox.max.x + grow + 1e-12);
            }
        }
    }
}

#[test]
fn owned_points_partition_the_cloud_with_cameras() {
    let pts: Vec<Vec3> = oracles::uniform_points(2000, 3).iter().map(|p| Vec3::new(p.x, p.y, p.z * 0.1)).collect();
    let cloud = PointCloud::from_positions(&pts, 0.01);
    let views: Vec<CameraView> = (0..8)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / 8.0;
            view(&format!("v{i}"), Vec3::new(0.5 + 0.8 * a.cos(), 0.5 + 0.8 * a.sin(), 0.6), Vec3::new(0.5, 0.5, 0.0))
        })
        .collect();
    let chunks = make_chunks(&cloud, &views, 0.25, 1.5, 0.2).unwrap();
    assert_eq!(chunks.len(), 16);
    for p in &pts {
        assert_eq!(chunks.iter().filter(|c| c.owns(p)).count(), 1);
    }
    for c in &chunks {
        let owned = (0..pts.len()).filter(|&i| c.owns(&pts[i]));
        for i in owned {
            assert!(c.point_indices.binary_search(&i).is_ok());
        }
        assert!(!c.camera_ids.is_empty());
    }
}

#[test]
fn frustum_test_never_misses_a_visible_cell() {
    let mut r = oracles::rng(8);
    let mut overlaps = 0;
    for _ in 0..300 {
        let eye = Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-1.0..2.0));
        let target = eye + oracles::unit_vector(&mut r);
        let v = view("v", eye, target);
        let lo = Vec3::new(r.random_range(-2.0..1.0), r.random_range(-2.0..1.0), r.random_range(-1.0..0.5));
        let b = Aabb { min: lo, max: lo + Vec3::new(r.random_range(0.1..1.5), r.random_range(0.1..1.5), r.random_range(0.1..1.0)) };
        let far = r.random_range(0.5..4.0);
        let sampled = (0..2000).any(|_| {
            let p = Vec3::new(
                r.random_range(b.min.x..b.max.x),
                r.random_range(b.min.y..b.max.y),
                r.random_range(b.min.z..b.max.z),
            );
            in_frustum(&v, far, &p)
        });
        let sat = hulls_intersect(&ConvexHull::frustum(&v, far), &ConvexHull::from_aabb(&b));
        if sampled {
            overlaps += 1;
            assert!(sat, "point of the box is visible but the hulls were judged disjoint");
        }
    }
    assert!(overlaps > 20);
}

#[test]
fn camera_looking_away_is_not_selected() {
    let cloud = PointCloud::from_positions(&[Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0)], 0.01);
    let away = view("away", Vec3::new(5.0, 5.0, 1.0), Vec3::new(10.0, 10.0, 1.0));
    let toward = view("toward", Vec3::new(5.0, 5.0, 1.0), Vec3::new(0.5, 0.5, 0.0));
    let chunks = make_chunks(&cloud, &[away, toward], 2.0, 20.0, 0.0).unwrap();
    assert_eq!(chunks.len(), 1);
    assert_eq!(chunks[0].camera_ids, vec!["toward".to_string()]);
}

#[test]
fn finalize_and_merge_keep_each_surfel_once() {
    let pts = oracles::uniform_points(400, 6);
    let cloud = PointCloud::from_positions(&pts, 0.01);
    let chunks = make_chunks(&cloud, &[], 0.3, 0.0, 0.5).unwrap();
    let model = SurfelModel::new(pts.iter().map(|p| Surfel::new(*p, Vec3::x(), Vec3::y(), 0.01, 0.01)).collect());
    let parts: Vec<SurfelModel> = chunks
        .iter()
        .map(|c| {
            let local = SurfelModel::new(c.point_indices.iter().map(|&i| model.surfels[i].clone()).collect());
            finalize_chunk(&local, c)
        })
        .collect();
    let (merged, dups) = merge_chunks(&parts).unwrap();
    assert_eq!(merged.len(), pts.len());
    assert_eq!(dups, 0);
    let untrimmed: Vec<SurfelModel> = chunks
        .iter()
        .map(|c| SurfelModel::new(c.point_indices.iter().map(|&i| model.surfels[i].clone()).collect()))
        .collect();
    let (all, dups) = merge_chunks(&untrimmed).unwrap();
    assert!(all.len() > pts.len());
    assert!(dups > 0);
}
