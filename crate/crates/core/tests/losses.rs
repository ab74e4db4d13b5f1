mod oracles;

use rand::Rng;
use surffill::optimizer::losses::{compute_losses, scale_regularizer, EDGE_EPS};
use surffill::renderer::{render, RenderOptions, RenderOutput};
use surffill::types::{CameraView, Grid, Intrinsics, PipelineConfig, Pose, Surfel, SurfelModel, Vec3};

fn random_image(w: usize, h: usize, r: &mut impl Rng) -> Grid<Vec3> {
    Grid::from_fn(w, h, |_, _| Vec3::new(r.random(), r.random(), r.random()))
}

fn setup(pred: Grid<Vec3>, gt: Grid<Vec3>, mask: Grid<u8>) -> (RenderOutput, CameraView) {
    let (w, h) = (gt.width, gt.height);
    let mut view = CameraView::new("v", Intrinsics::from_fov(w, h, 1.0), Pose::identity(), gt);
    view.mask = mask;
    let mut out = render(&SurfelModel::default(), &view, &RenderOptions::default());
    out.color = pred;
    (out, view)
}

fn photometric_only() -> PipelineConfig {
    PipelineConfig {
        w_dist: 0.0,
        w_normal: 0.0,
        ..PipelineConfig::default()
    }
}

#[test]
fn photometric_terms_match_direct_ssim() {
    let cfg = photometric_only();
    for seed in 0..6 {
        let mut r = oracles::rng(seed);
        let (w, h) = (r.random_range(5..20), r.random_range(5..20));
        let gt = random_image(w, h, &mut r);
        let pred = Grid::from_fn(w, h, |x, y| gt.get(x, y) * 0.7 + Vec3::repeat(r.random::<f64>() * 0.3));
        let mask = Grid::from_fn(w, h, |_, _| r.random_range(0..2u8));
        let weights: Vec<f64> = mask.data.iter().map(|&m| 0.5 + 0.5 * m as f64).collect();
        let (out, view) = setup(pred.clone(), gt.clone(), mask);
        let l = compute_losses(&out, &view, &SurfelModel::default(), &cfg).unwrap();
        let (l1, dssim) = oracles::photometric(&pred, &gt, &weights);
        assert!((l.l1 - l1).abs() < 1e-12, "{} vs {l1}", l.l1);
        assert!((l.dssim - dssim).abs() < 1e-10, "{} vs {dssim}", l.dssim);
        assert!((l.l_c - (0.6 * l1 + 0.4 * dssim)).abs() < 1e-10);
        assert!((l.total - l.recompute_total(&cfg)).abs() < 1e-15);
    }
}

#[test]
fn edge_term_matches_charbonnier_of_forward_differences() {
    let mut r = oracles::rng(7);
    let (w, h) = (9, 7);
    let gt = random_image(w, h, &mut r);
    let pred = random_image(w, h, &mut r);
    let (out, view) = setup(pred.clone(), gt.clone(), Grid::filled(w, h, 1));
    let l = compute_losses(&out, &view, &SurfelModel::default(), &photometric_only()).unwrap();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let d = |img: &Grid<Vec3>, dx: usize, dy: usize| {
                    if x + dx < w && y + dy < h {
                        img.get(x + dx, y + dy)[c] - img.get(x, y)[c]
                    } else {
                        0.0
                    }
                };
                let gx = d(&pred, 1, 0) - d(&gt, 1, 0);
                let gy = d(&pred, 0, 1) - d(&gt, 0, 1);
                sum += ((gx * gx + gy * gy + EDGE_EPS * EDGE_EPS).sqrt() - EDGE_EPS) / 3.0;
            }
        }
    }
    assert!((l.l_edge - sum / (w * h) as f64).abs() < 1e-12);
}

#[test]
fn identical_images_cost_nothing() {
    let mut r = oracles::rng(3);
    let img = random_image(12, 10, &mut r);
    let (out, view) = setup(img.clone(), img, Grid::filled(12, 10, 0));
    let l = compute_losses(&out, &view, &SurfelModel::default(), &photometric_only()).unwrap();
    assert_eq!(l.l1, 0.0);
    assert_eq!(l.l_edge, 0.0);
    assert!(l.dssim.abs() < 1e-12);
}

#[test]
fn masked_pixels_count_double() {
    assert_eq!(PipelineConfig::photometric_weight(1), 1.0);
    assert_eq!(PipelineConfig::photometric_weight(0), 0.5);
    let gt = Grid::filled(6, 6, Vec3::repeat(0.5));
    let mut pred = gt.clone();
    *pred.get_mut(2, 3) = Vec3::repeat(0.8);
    let cfg = photometric_only();
    let run = |m: u8| {
        let mut mask = Grid::filled(6, 6, 0);
        *mask.get_mut(2, 3) = m;
        let (out, view) = setup(pred.clone(), gt.clone(), mask);
        compute_losses(&out, &view, &SurfelModel::default(), &cfg).unwrap()
    };
    let (inside, outside) = (run(1), run(0));
    assert!((inside.l1 - 2.0 * outside.l1).abs() < 1e-15);
    assert!((inside.l1 - 0.3 / 36.0).abs() < 1e-15);
}

#[test]
fn scale_regularizer_of_a_unit_surfel_is_one() {
    let unit = SurfelModel::new(vec![Surfel::new(Vec3::zeros(), Vec3::x(), Vec3::y(), 1.0, 1.0)]);
    assert_eq!(scale_regularizer(&unit), 1.0);
    let two = SurfelModel::new(vec![
        Surfel::new(Vec3::zeros(), Vec3::x(), Vec3::y(), 1.0, 3.0),
        Surfel::new(Vec3::zeros(), Vec3::x(), Vec3::y(), 0.5, 0.5),
    ]);
    assert_eq!(scale_regularizer(&two), 1.25);
    assert_eq!(scale_regularizer(&SurfelModel::default()), 0.0);
}

#[test]
fn mismatched_mask_is_rejected() {
    let img = Grid::filled(4, 4, Vec3::zeros());
    let (out, view) = setup(img.clone(), img, Grid::filled(3, 4, 0));
    assert!(compute_losses(&out, &view, &SurfelModel::default(), &photometric_only()).is_err());
}
