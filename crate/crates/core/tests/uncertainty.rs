mod oracles;

use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;
use rand::Rng;
use surffill::types::{CameraView, Grid, Intrinsics, Pose, Surfel, SurfelModel, Vec3};
use surffill::uncertainty::{
    compute_uncertainty, sampling_distribution, threshold_mask, view_sampling_weights, SAMPLING_FLOOR,
};

fn blank(id: &str, w: usize, h: usize, eye: Vec3) -> CameraView {
    CameraView::new(id, Intrinsics::from_fov(w, h, 1.0), Pose::look_at(eye, Vec3::zeros(), Vec3::z()), Grid::filled(w, h, Vec3::zeros()))
}

fn aimed(id: &str, eye: Vec3, target: Vec3) -> CameraView {
    CameraView::new(id, Intrinsics::from_fov(16, 16, 1.0), Pose::look_at(eye, target, Vec3::z()), Grid::filled(16, 16, Vec3::zeros()))
}

/// Largest angle to a 4-neighbour over pi/2, with acos on clamped dot products.
fn proxy_oracle(n: &Grid<Vec3>) -> Grid<f64> {
    Grid::from_fn(n.width, n.height, |x, y| {
        let c = n.get(x, y).normalize();
        let mut best: f64 = 0.0;
        for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < n.width && (ny as usize) < n.height {
                let q = n.get(nx as usize, ny as usize).normalize();
                best = best.max(c.dot(&q).clamp(-1.0, 1.0).acos());
            }
        }
        (best / FRAC_PI_2).min(1.0)
    })
}

#[test]
fn normal_proxy_matches_direct_angles() {
    let mut r = oracles::rng(11);
    for _ in 0..20 {
        let (w, h) = (r.random_range(1..12), r.random_range(1..12));
        let mut v = blank("v", w, h, Vec3::new(0.0, 0.0, 3.0));
        v.normal_map = Some(Grid::from_fn(w, h, |_, _| oracles::unit_vector(&mut r)));
        let got = compute_uncertainty(&v).unwrap().uncertainty;
        let want = proxy_oracle(v.normal_map.as_ref().unwrap());
        for (a, b) in got.data.iter().zip(&want.data) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
            assert!((0.0..=1.0).contains(a));
        }
    }
}

#[test]
fn angular_error_takes_precedence_and_nan_is_uncertain() {
    let mut v = blank("v", 3, 1, Vec3::new(0.0, 0.0, 3.0));
    v.normal_map = Some(Grid::filled(3, 1, Vec3::z()));
    v.angular_error_map = Some(Grid { width: 3, height: 1, data: vec![FRAC_PI_2 * 0.5, f64::NAN, 7.0] });
    assert_eq!(compute_uncertainty(&v).unwrap().uncertainty.data, vec![0.5, 1.0, 1.0]);
}

#[test]
fn mismatched_or_missing_maps_are_errors() {
    let mut v = blank("v", 4, 4, Vec3::new(0.0, 0.0, 3.0));
    assert!(compute_uncertainty(&v).is_err());
    v.normal_map = Some(Grid::filled(3, 4, Vec3::z()));
    assert!(compute_uncertainty(&v).is_err());
}

#[test]
fn mask_is_strictly_above_threshold() {
    let mut v = blank("v", 4, 1, Vec3::new(0.0, 0.0, 3.0));
    v.uncertainty = Grid { width: 4, height: 1, data: vec![0.1, 0.25, 0.2500001, 0.9] };
    assert_eq!(threshold_mask(&v, 0.25).mask.data, vec![0, 0, 1, 1]);
}

#[test]
fn sampling_weights_count_high_ambiguity_surfels_in_view() {
    let mut r = oracles::rng(5);
    let surfels: Vec<Surfel> = (0..400)
        .map(|_| {
            let c = Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), 0.0);
            let mut s = Surfel::new(c, Vec3::x(), Vec3::y(), 0.01, 0.01);
            s.ambiguity = if c.x > 1.0 { 2.0 } else { 1.0 };
            s
        })
        .collect();
    let model = SurfelModel::new(surfels);
    let views = vec![
        aimed("left", Vec3::new(-2.0, 0.0, 2.0), Vec3::new(-2.0, 0.1, 0.0)),
        aimed("right", Vec3::new(2.0, 0.0, 2.0), Vec3::new(2.0, 0.1, 0.0)),
        CameraView::new("sky", Intrinsics::from_fov(16, 16, 0.5), Pose::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, 10.0), Vec3::x()), Grid::filled(16, 16, Vec3::zeros())),
    ];
    let weighted = view_sampling_weights(&views, &model, 1.3);
    for v in &weighted {
        let seen: Vec<&Surfel> = model
            .surfels
            .iter()
            .filter(|s| {
                let c = v.pose.to_camera(&s.center);
                let (u, w) = (v.intrinsics.fx * c.x / c.z + v.intrinsics.cx, v.intrinsics.fy * c.y / c.z + v.intrinsics.cy);
                c.z > 0.0 && u >= 0.0 && w >= 0.0 && u < 16.0 && w < 16.0
            })
            .collect();
        let want = if seen.is_empty() { 0.0 } else { seen.iter().filter(|s| s.ambiguity > 1.3).count() as f64 / seen.len() as f64 };
        assert_eq!(v.sampling_weight, want, "{}", v.id);
    }
    assert!(weighted[1].sampling_weight > weighted[0].sampling_weight);
    assert_eq!(weighted[2].sampling_weight, 0.0);
    let p = sampling_distribution(&weighted);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((p[2] / p[1] - SAMPLING_FLOOR / weighted[1].sampling_weight).abs() < 1e-12);
}

proptest! {
    #[test]
    fn sampling_distribution_is_normalised_and_proportional(ws in proptest::collection::vec(0.0..1.0f64, 1..20)) {
        let views: Vec<CameraView> = ws
            .iter()
            .map(|&w| {
                let mut v = blank("v", 2, 2, Vec3::new(0.0, 0.0, 1.0));
                v.sampling_weight = w;
                v
            })
            .collect();
        let p = sampling_distribution(&views);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let eff: Vec<f64> = ws.iter().map(|&w| if w > 0.0 { w } else { SAMPLING_FLOOR }).collect();
        for i in 1..p.len() {
            prop_assert!((p[i] * eff[0] - p[0] * eff[i]).abs() < 1e-9);
        }
    }
}
