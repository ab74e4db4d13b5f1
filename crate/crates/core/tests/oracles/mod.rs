//! Brute-force reference implementations shared by the integration tests and
//! the acceptance harness. Everything here is written directly from the
//! defining formulas, without the crate's indices or rasteriser.

#![allow(dead_code)]

pub mod gradcheck;
pub mod planted;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surffill::types::{CameraView, Grid, PipelineConfig, PointCloud, Surfel, SurfelModel, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut r = rng(seed);
    (0..n).map(|_| Vec3::new(r.random(), r.random(), r.random())).collect()
}

pub fn unit_vector(r: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Sorted distances from `points[i]` to every other point.
fn sorted_distances_excluding(points: &[Vec3], i: usize) -> Vec<f64> {
    let mut d: Vec<f64> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, q)| (q - points[i]).norm())
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

/// Mean distance to the `k` nearest other points over `delta`, by exhaustive search.
pub fn ambiguity(points: &[Vec3], k: usize, delta: f64) -> Vec<f64> {
    (0..points.len())
        .map(|i| sorted_distances_excluding(points, i)[..k].iter().sum::<f64>() / (k as f64 * delta))
        .collect()
}

/// Sum of the `k` smallest distances from `p` to `set`.
pub fn knn_distance_sum(p: &Vec3, set: &[Vec3], k: usize) -> f64 {
    let mut d: Vec<f64> = set.iter().map(|q| (q - p).norm()).collect();
    d.sort_by(f64::total_cmp);
    d[..k].iter().sum()
}

pub fn nearest(p: &Vec3, set: &[Vec3]) -> f64 {
    set.iter().map(|q| (q - p).norm()).fold(f64::INFINITY, f64::min)
}

/// Chamfer (mean of the two directed mean distances), precision and recall.
pub fn cloud_metrics(candidate: &[Vec3], reference: &[Vec3], threshold: f64) -> (f64, f64, f64) {
    let c2r: Vec<f64> = candidate.iter().map(|p| nearest(p, reference)).collect();
    let r2c: Vec<f64> = reference.iter().map(|p| nearest(p, candidate)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let within = |v: &[f64]| v.iter().filter(|&&d| d <= threshold).count() as f64 / v.len() as f64;
    (0.5 * (mean(&c2r) + mean(&r2c)), within(&c2r), within(&r2c))
}

/// Fraction of `removed` points with a completion point within each radius.
pub fn radius_recall(completed: &[Vec3], removed: &[Vec3], radii: &[f64]) -> Vec<f64> {
    radii
        .iter()
        .map(|&r| removed.iter().filter(|p| completed.iter().any(|q| (q - *p).norm() <= r)).count() as f64 / removed.len() as f64)
        .collect()
}

/// Per-pixel blend of `model` seen from `view`, working in world space:
/// every ray through a pixel center is intersected with each surfel plane,
/// fragments are sorted by camera depth and composited front to back.
/// Returns (color, alpha) per pixel. Footprint clamping is not applied, so
/// scenes should use surfels that cover several pixels.
pub fn render(model: &SurfelModel, view: &CameraView, background: Vec3) -> Grid<(Vec3, f64)> {
    let eye = view.pose.camera_center();
    let rt = view.pose.rotation.transpose();
    let fwd = rt * Vec3::z();
    Grid::from_fn(view.width(), view.height(), |x, y| {
        let k = &view.intrinsics;
        let cam_dir = Vec3::new((x as f64 + 0.5 - k.cx) / k.fx, (y as f64 + 0.5 - k.cy) / k.fy, 1.0);
        let dir = rt * cam_dir;
        let mut frags: Vec<(f64, usize, f64)> = Vec::new();
        for (i, s) in model.surfels.iter().enumerate() {
            let n = s.tangent_u.cross(&s.tangent_v);
            let denom = n.dot(&dir);
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = n.dot(&(s.center - eye)) / denom;
            let hit = eye + dir * t;
            let depth = (hit - eye).dot(&fwd);
            if depth <= 1e-3 {
                continue;
            }
            let r = hit - s.center;
            let (u, v) = (r.dot(&s.tangent_u) / s.scale_u, r.dot(&s.tangent_v) / s.scale_v);
            let g = (-0.5 * (u * u + v * v)).exp();
            if g >= 1.0 / 255.0 {
                frags.push((depth, i, s.opacity * g));
            }
        }
        frags.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut t = 1.0;
        let mut c = Vec3::zeros();
        for &(_, i, a) in &frags {
            c += model.surfels[i].color * (a * t);
            t *= 1.0 - a;
        }
        (c + background * t, 1.0 - t)
    })
}

/// SSIM of one channel with an 11x11 Gaussian window (sigma 1.5) evaluated
/// by direct 2D summation, zero padding outside the image.
pub fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize) -> Vec<f64> {
    let r = 5isize;
    let mut kernel = [[0.0; 11]; 11];
    let mut sum = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *k = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            sum += *k;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    let k = kernel[(dy + r) as usize][(dx + r) as usize] / sum;
                    let i = yy as usize * w + xx as usize;
                    ma += k * a[i];
                    mb += k * b[i];
                    aa += k * a[i] * a[i];
                    bb += k * b[i] * b[i];
                    ab += k * a[i] * b[i];
                }
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            out[y as usize * w + x as usize] =
                (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    out
}

/// Mean over pixels and channels of `1 - SSIM`, and the mean absolute
/// difference, both per pixel weighted by `weights`.
pub fn photometric(a: &Grid<Vec3>, b: &Grid<Vec3>, weights: &[f64]) -> (f64, f64) {
    let (w, h) = (a.width, a.height);
    let n = (w * h) as f64;
    let mut dssim = vec![0.0; w * h];
    for c in 0..3 {
        let ac: Vec<f64> = a.data.iter().map(|p| p[c]).collect();
        let bc: Vec<f64> = b.data.iter().map(|p| p[c]).collect();
        for (d, s) in dssim.iter_mut().zip(ssim_channel(&ac, &bc, w, h)) {
            *d += (1.0 - s) / 3.0;
        }
    }
    let l1: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .zip(weights)
        .map(|((p, q), wt)| wt * ((p.x - q.x).abs() + (p.y - q.y).abs() + (p.z - q.z).abs()) / 3.0)
        .sum::<f64>()
        / n;
    let ds = dssim.iter().zip(weights).map(|(d, wt)| d * wt).sum::<f64>() / n;
    (l1, ds)
}

/// The five completion-filter rules applied one after the other, with
/// exhaustive neighbour searches. Returns survivors and per-stage removals.
pub fn filter(model: &SurfelModel, lidar: &PointCloud, cfg: &PipelineConfig) -> (Vec<Surfel>, [usize; 5]) {
    let mut removed = [0; 5];
    let mut keep = |stage: usize, set: Vec<Surfel>, rule: &dyn Fn(usize, &Surfel) -> bool| -> Vec<Surfel> {
        let out: Vec<Surfel> = set.iter().enumerate().filter(|(i, s)| rule(*i, s)).map(|(_, s)| s.clone()).collect();
        removed[stage] = set.len() - out.len();
        out
    };
    let s = model.surfels.clone();
    let s = keep(0, s, &|_, s| s.scale_u.max(s.scale_v) <= cfg.scale_filter_multiplier * lidar.delta);
    let s = keep(1, s, &|_, s| s.opacity >= cfg.prune_opacity_base);
    let s = keep(2, s, &|_, s| s.was_densified);
    let scan = lidar.positions();
    let mut union: Vec<Vec3> = s.iter().map(|s| s.center).collect();
    union.extend(&scan);
    let k = cfg.knn_k_ambiguity;
    let amb: Vec<f64> = (0..s.len())
        .map(|i| sorted_distances_excluding(&union, i)[..k].iter().sum::<f64>() / (k as f64 * lidar.delta))
        .collect();
    let s = keep(3, s, &|i, _| amb[i] <= cfg.tau);
    let s = keep(4, s, &|_, s| {
        let d = knn_distance_sum(&s.center, &scan, cfg.knn_k_filter);
        d > cfg.t_min && d < cfg.t_max
    });
    (s, removed)
}
