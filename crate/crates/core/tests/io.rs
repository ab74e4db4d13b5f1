mod oracles;

use proptest::prelude::*;
use rand::Rng;
use surffill::io::ply::PlyFormat;
use surffill::io::{
    parse_point_cloud, point_cloud_bytes, read_config, read_point_cloud, read_surfel_model, read_views,
    write_point_cloud, write_surfel_model, write_views,
};
use surffill::types::{
    CameraView, Grid, Intrinsics, PipelineConfig, PointCloud, PointSource, Pose, ScanPoint, Surfel, SurfelModel, Vec3,
};

fn mixed_cloud(seed: u64, n: usize) -> PointCloud {
    let mut r = oracles::rng(seed);
    let points = oracles::uniform_points(n, seed)
        .into_iter()
        .map(|p| {
            let mut s = if r.random_bool(0.3) { ScanPoint::completed(p) } else { ScanPoint::lidar(p) };
            s.ambiguity = r.random_range(0.0..3.0);
            s.high_ambiguity = s.ambiguity > 1.5;
            s
        })
        .collect();
    PointCloud::new(points, 0.0123)
}

#[test]
fn point_clouds_round_trip_in_both_encodings() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = mixed_cloud(1, 500);
    for (name, fmt) in [("a.ply", PlyFormat::Ascii), ("b.ply", PlyFormat::BinaryLittleEndian)] {
        let path = dir.path().join(name);
        write_point_cloud(&cloud, &path, fmt).unwrap();
        let back = read_point_cloud(&path).unwrap();
        assert_eq!(back.points, cloud.points);
        assert_eq!(back.delta, cloud.delta);
        assert!(back.points.iter().any(|p| p.source == PointSource::Completed));
    }
}

#[test]
fn sidecar_delta_overrides_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ply");
    write_point_cloud(&mixed_cloud(2, 50), &path, PlyFormat::BinaryLittleEndian).unwrap();
    std::fs::write(dir.path().join("c.ply.cfg"), "delta = 0.5\n").unwrap();
    assert_eq!(read_point_cloud(&path).unwrap().delta, 0.5);
}

#[test]
fn missing_delta_falls_back_to_median_spacing() {
    let pts: Vec<Vec3> = (0..30).map(|i| Vec3::new(i as f64 * 0.02, 0.0, 0.0)).collect();
    let text = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n{}",
        pts.len(),
        pts.iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect::<String>()
    );
    let c = parse_point_cloud(text.as_bytes(), None).unwrap();
    assert!((c.delta - 0.02).abs() < 1e-6);
    assert_eq!(parse_point_cloud(text.as_bytes(), Some(0.1)).unwrap().delta, 0.1);
}

#[test]
fn surfel_models_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = oracles::rng(3);
    let surfels: Vec<Surfel> = (0..200)
        .map(|i| {
            let n = oracles::unit_vector(&mut r);
            let u = n.cross(&Vec3::new(0.3, 0.7, 0.1)).normalize();
            let mut s = Surfel::new(Vec3::new(r.random(), r.random(), r.random()), u, n.cross(&u), 0.01, 0.02);
            s.opacity = r.random();
            s.color = Vec3::new(r.random(), r.random(), r.random());
            s.ambiguity = r.random_range(0.0..4.0);
            s.grad_stat = r.random();
            s.view_count = i;
            s.was_densified = i % 3 == 0;
            s
        })
        .collect();
    let model = SurfelModel::new(surfels);
    let path = dir.path().join("m.ply");
    write_surfel_model(&model, &path).unwrap();
    assert_eq!(read_surfel_model(&path).unwrap(), model);
}

#[test]
fn view_directories_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (12, 9);
    let views: Vec<CameraView> = (0..3)
        .map(|i| {
            let image = Grid::from_fn(w, h, |x, y| Vec3::new(x as f64 / w as f64, y as f64 / h as f64, i as f64 / 3.0));
            let pose = Pose::look_at(Vec3::new(3.0, i as f64, 2.0), Vec3::zeros(), Vec3::z());
            let mut v = CameraView::new(format!("cam{i}"), Intrinsics::from_fov(w, h, 0.9), pose, image);
            v.normal_map = Some(Grid::from_fn(w, h, |x, _| Vec3::new(x as f64 * 0.1, 0.2, 1.0).normalize()));
            v.angular_error_map = (i == 1).then(|| Grid::from_fn(w, h, |x, y| (x + y) as f64 * 0.125));
            v.uncertainty = Grid::from_fn(w, h, |x, y| (x * y) as f64 * 0.0078125);
            v.mask = v.uncertainty.map(|&u| u8::from(u > 0.3));
            v.sampling_weight = 0.25 * i as f64;
            v
        })
        .collect();
    write_views(dir.path(), &views).unwrap();
    let back = read_views(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in views.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.intrinsics, b.intrinsics);
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.sampling_weight, b.sampling_weight);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.uncertainty, b.uncertainty);
        assert_eq!(a.angular_error_map, b.angular_error_map);
        for (p, q) in a.image.data.iter().zip(&b.image.data) {
            assert!((p - q).amax() <= 0.5 / 255.0 + 1e-12);
        }
        for (p, q) in a.normal_map.as_ref().unwrap().data.iter().zip(&b.normal_map.as_ref().unwrap().data) {
            assert!((p - q).amax() < 1e-6);
        }
    }
}

#[test]
fn config_files_round_trip_and_reject_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.set("tau", "1.7").unwrap();
    cfg.set("iterations", "42").unwrap();
    let path = dir.path().join("p.cfg");
    std::fs::write(&path, cfg.to_text()).unwrap();
    assert_eq!(read_config(&path).unwrap(), cfg);
    std::fs::write(&path, "no_such_key = 1\n").unwrap();
    assert!(read_config(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn clouds_round_trip_for_any_finite_positions(
        pts in proptest::collection::vec((-1e4..1e4f64, -1e4..1e4f64, -1e4..1e4f64), 1..80),
        ascii in any::<bool>(),
    ) {
        let pts: Vec<Vec3> = pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
        let cloud = PointCloud::from_positions(&pts, 0.5);
        let fmt = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
        let back = parse_point_cloud(&point_cloud_bytes(&cloud, fmt), None).unwrap();
        prop_assert_eq!(back.positions(), pts);
    }
}
