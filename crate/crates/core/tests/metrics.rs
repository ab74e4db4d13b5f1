mod oracles;

use proptest::prelude::*;
use surffill::metrics::{evaluate, f1_score, radius_recall};
use surffill::types::{PointCloud, PointSource, ScanPoint, Vec3};

fn lattice(n: usize, d: f64, offset: Vec3) -> PointCloud {
    let pts: Vec<Vec3> = (0..n)
        .flat_map(|i| (0..n).flat_map(move |j| (0..3).map(move |k| Vec3::new(i as f64, j as f64, k as f64) * d + offset)))
        .collect();
    PointCloud::from_positions(&pts, d)
}

#[test]
fn identical_clouds_are_perfect() {
    let c = lattice(10, 0.01, Vec3::zeros());
    let m = evaluate(&c, &c, 0.005).unwrap();
    assert_eq!(m.chamfer, 0.0);
    assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
}

#[test]
fn rigid_offset_gives_the_offset() {
    let d = 0.003;
    let a = lattice(12, 0.01, Vec3::zeros());
    let b = lattice(12, 0.01, Vec3::new(d, 0.0, 0.0));
    let m = evaluate(&b, &a, 0.005).unwrap();
    assert!((m.chamfer - d).abs() < 1e-9, "{}", m.chamfer);
    assert_eq!(m.f1, 1.0);
    let far = evaluate(&b, &a, 0.002).unwrap();
    assert_eq!(far.f1, 0.0);
}

#[test]
fn radius_recall_matches_exhaustive_search() {
    let completed: Vec<Vec3> = oracles::uniform_points(1000, 1);
    let removed: Vec<Vec3> = oracles::uniform_points(1000, 2);
    let mut cloud = PointCloud::from_positions(&oracles::uniform_points(300, 3), 0.01);
    cloud.points.extend(completed.iter().map(|p| ScanPoint::completed(*p)));
    let radii = [0.01, 0.02, 0.04, 0.08];
    let got = radius_recall(&cloud, &PointCloud::from_positions(&removed, 0.01), &radii).unwrap();
    let want = oracles::radius_recall(&completed, &removed, &radii);
    for ((r, g), w) in got.iter().zip(&want) {
        assert_eq!(g, w, "radius {r}");
    }
    assert!(want[0] < want[3]);
}

#[test]
fn radius_recall_ignores_scan_points() {
    let removed = PointCloud::from_positions(&[Vec3::zeros()], 0.01);
    let only_scan = PointCloud::from_positions(&[Vec3::zeros()], 0.01);
    assert_eq!(radius_recall(&only_scan, &removed, &[1.0]).unwrap(), vec![(1.0, 0.0)]);
    let mut with_completion = only_scan.clone();
    with_completion.points.push(ScanPoint::completed(Vec3::new(0.5, 0.0, 0.0)));
    assert_eq!(with_completion.points[1].source, PointSource::Completed);
    assert_eq!(radius_recall(&with_completion, &removed, &[0.4, 0.5]).unwrap(), vec![(0.4, 0.0), (0.5, 1.0)]);
}

#[test]
fn empty_clouds_are_rejected() {
    let c = lattice(2, 1.0, Vec3::zeros());
    assert!(evaluate(&PointCloud::new(vec![], 1.0), &c, 0.1).is_err());
    assert!(evaluate(&c, &PointCloud::new(vec![], 1.0), 0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_exhaustive_search(
        a in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 1..60),
        b in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 1..60),
        thr in 0.01..0.5f64,
    ) {
        let a: Vec<Vec3> = a.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        let b: Vec<Vec3> = b.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        let m = evaluate(&PointCloud::from_positions(&a, 0.1), &PointCloud::from_positions(&b, 0.1), thr).unwrap();
        let (ch, p, r) = oracles::cloud_metrics(&a, &b, thr);
        prop_assert!((m.chamfer - ch).abs() < 1e-12);
        prop_assert_eq!(m.precision, p);
        prop_assert_eq!(m.recall, r);
        prop_assert!((m.f1 - f1_score(p, r)).abs() < 1e-15);
        let swapped = evaluate(&PointCloud::from_positions(&b, 0.1), &PointCloud::from_positions(&a, 0.1), thr).unwrap();
        prop_assert!((swapped.chamfer - m.chamfer).abs() < 1e-12);
        prop_assert_eq!(swapped.precision, m.recall);
    }
}
