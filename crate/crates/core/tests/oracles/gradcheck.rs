//! Randomised small scenes and central finite differences of the full
//! objective, for checking analytic surfel gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surffill::geometry::rotate;
use surffill::optimizer::{compute_losses, objective_gradient};
use surffill::renderer::{render, RenderOptions, SurfelGrad};
use surffill::types::{CameraView, Grid, Intrinsics, PipelineConfig, Pose, Surfel, SurfelModel, Vec3};

pub const STEP: f64 = 1e-6;

pub struct Scene {
    pub model: SurfelModel,
    pub view: CameraView,
    pub cfg: PipelineConfig,
    pub opts: RenderOptions,
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.2 && n < 1.0 {
            return v / n;
        }
    }
}

pub fn scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.random_range(12..=32);
    let h = rng.random_range(12..=32);
    let eye = unit(&mut rng) * rng.random_range(2.5..3.5);
    let view_image = Grid::from_fn(w, h, |_, _| Vec3::new(rng.random(), rng.random(), rng.random()));
    let mut view = CameraView::new("g", Intrinsics::from_fov(w, h, 0.9), Pose::look_at(eye, Vec3::zeros(), Vec3::z()), view_image);
    view.mask = Grid::from_fn(w, h, |_, _| u8::from(rng.random_bool(0.5)));

    let n = rng.random_range(1..=8);
    let surfels = (0..n)
        .map(|i| {
            let normal = unit(&mut rng);
            let (tu, tv) = surffill::geometry::frame_from_normal(&normal);
            // One surfel per scene is small enough to hit the footprint floor.
            let tiny = i == 0 && seed % 3 == 0;
            let su = if tiny { 0.004 } else { rng.random_range(0.08..0.35) };
            let sv = if tiny { 0.2 } else { rng.random_range(0.08..0.35) };
            let mut s = Surfel::new(
                Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
                tu,
                tv,
                su,
                sv,
            );
            s.opacity = rng.random_range(0.15..0.9);
            s.color = Vec3::new(rng.random(), rng.random(), rng.random());
            s
        })
        .collect();

    let cfg = PipelineConfig {
        lambda_dssim: rng.random_range(0.0..1.0),
        w_edge: rng.random_range(0.0..0.5),
        w_scale: rng.random_range(0.0..2.0),
        w_dist: rng.random_range(0.0..5.0),
        w_normal: rng.random_range(0.0..0.5),
        ..PipelineConfig::default()
    };
    let opts = RenderOptions {
        background: Vec3::new(rng.random(), rng.random(), rng.random()),
        ..RenderOptions::default()
    };
    Scene {
        model: SurfelModel::new(surfels),
        view,
        cfg,
        opts,
    }
}

pub fn loss(sc: &Scene, model: &SurfelModel) -> f64 {
    let out = render(model, &sc.view, &sc.opts);
    compute_losses(&out, &sc.view, model, &sc.cfg).unwrap().total
}

/// Parameter `k` of surfel `i` perturbed by `h`, in the parameterisation of
/// [`SurfelGrad`]: world position, world axis-angle, log scales, opacity, color.
pub fn perturbed(model: &SurfelModel, i: usize, k: usize, h: f64) -> SurfelModel {
    let mut m = model.clone();
    let s = &mut m.surfels[i];
    match k {
        0..=2 => s.center[k] += h,
        3..=5 => {
            let mut w = Vec3::zeros();
            w[k - 3] = h;
            s.tangent_u = rotate(&s.tangent_u, &w);
            s.tangent_v = rotate(&s.tangent_v, &w);
        }
        6 => s.scale_u *= h.exp(),
        7 => s.scale_v *= h.exp(),
        8 => s.opacity += h,
        _ => s.color[k - 9] += h,
    }
    m
}

pub fn analytic(g: &SurfelGrad, k: usize) -> f64 {
    match k {
        0..=2 => g.position[k],
        3..=5 => g.rotation[k - 3],
        6 | 7 => g.log_scale[k - 6],
        8 => g.opacity,
        _ => g.color[k - 9],
    }
}

/// Every (surfel, parameter, analytic, finite difference) of one scene.
pub fn compare(sc: &Scene) -> Vec<(usize, usize, f64, f64)> {
    let out = render(&sc.model, &sc.view, &sc.opts);
    let (_, grads) = objective_gradient(&out, &sc.view, &sc.model, &sc.cfg).unwrap();
    let mut rows = Vec::new();
    for (i, g) in grads.iter().enumerate() {
        for k in 0..12 {
            let fd = (loss(sc, &perturbed(&sc.model, i, k, STEP)) - loss(sc, &perturbed(&sc.model, i, k, -STEP))) / (2.0 * STEP);
            rows.push((i, k, analytic(g, k), fd));
        }
    }
    rows
}

/// Relative error with a floor of 1e-3 of the largest derivative in the scene.
pub fn relative_errors(rows: &[(usize, usize, f64, f64)]) -> Vec<f64> {
    let scale = rows.iter().map(|r| r.3.abs()).fold(0.0, f64::max);
    rows.iter().map(|&(_, _, a, fd)| (a - fd).abs() / fd.abs().max(1e-3 * scale).max(1e-9)).collect()
}
