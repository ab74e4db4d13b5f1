//! Training objective: masked photometric and edge terms, scale regulariser,
//! depth distortion and normal consistency, with gradients.

use crate::error::{Error, Result};
use crate::renderer::{render_backward, PixelGrads, RenderOutput, SurfelGrad};
use crate::types::{CameraView, Grid, PipelineConfig, SurfelModel, Vec3};

/// SSIM window radius and standard deviation.
const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Charbonnier smoothing of the edge-loss magnitude.
pub const EDGE_EPS: f64 = 1e-3;

/// Pixels whose (and whose right/lower neighbours') alpha is below this get
/// no depth-derived normal.
pub const NORMAL_MIN_ALPHA: f64 = 0.1;

/// Components of the objective. The image terms are means over all pixels
/// of `(0.5 + 0.5 M)`-weighted per-pixel values; `l_dist` and `l_normal` are
/// means over the pixels of the complement mask.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    /// Weighted mean of `1 - SSIM`.
    pub dssim: f64,
    pub l_c: f64,
    pub l_edge: f64,
    pub r_scale: f64,
    pub l_dist: f64,
    pub l_normal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const COLUMNS: [&'static str; 8] = ["l1", "dssim", "l_c", "l_edge", "r_scale", "l_dist", "l_normal", "total"];

    pub fn values(&self) -> [f64; 8] {
        [
            self.l1,
            self.dssim,
            self.l_c,
            self.l_edge,
            self.r_scale,
            self.l_dist,
            self.l_normal,
            self.total,
        ]
    }

    pub fn recompute_total(&self, cfg: &PipelineConfig) -> f64 {
        self.l_c + cfg.w_edge * self.l_edge + cfg.w_scale * self.r_scale + cfg.w_dist * self.l_dist
            + cfg.w_normal * self.l_normal
    }
}

fn gaussian_kernel() -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let d = i as f64 - SSIM_RADIUS as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable "same"-size Gaussian filter with zero padding.
fn blur(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = x as isize + k as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * data[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yy = y as isize + k as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn channel(img: &Grid<Vec3>, c: usize) -> Vec<f64> {
    img.data.iter().map(|p| p[c]).collect()
}

/// Per-pixel SSIM of one channel and, if `coeff` is given, the gradient of
/// `sum_p coeff_p * (1 - ssim_p)` with respect to `x`.
fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize, coeff: Option<&[f64]>) -> (Vec<f64>, Option<Vec<f64>>) {
    let k = gaussian_kernel();
    let n = w * h;
    let mx = blur(x, w, h, &k);
    let my = blur(y, w, h, &k);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let exx = blur(&xx, w, h, &k);
    let eyy = blur(&yy, w, h, &k);
    let exy = blur(&xy, w, h, &k);
    let mut s = vec![0.0; n];
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; n];
    let mut gc = vec![0.0; n];
    for i in 0..n {
        let a1 = 2.0 * mx[i] * my[i] + SSIM_C1;
        let a2 = 2.0 * (exy[i] - mx[i] * my[i]) + SSIM_C2;
        let b1 = mx[i] * mx[i] + my[i] * my[i] + SSIM_C1;
        let b2 = exx[i] - mx[i] * mx[i] + eyy[i] - my[i] * my[i] + SSIM_C2;
        let si = a1 * a2 / (b1 * b2);
        s[i] = si;
        if let Some(c) = coeff {
            let d_mu = (2.0 * my[i] * (a2 - a1) - 2.0 * mx[i] * si * (b2 - b1)) / (b1 * b2);
            let d_exy = 2.0 * a1 / (b1 * b2);
            let d_exx = -si / b2;
            ga[i] = -c[i] * d_mu;
            gb[i] = -c[i] * d_exx;
            gc[i] = -c[i] * d_exy;
        }
    }
    let grad = coeff.map(|_| {
        // The zero-padded symmetric filter is its own adjoint.
        let ta = blur(&ga, w, h, &k);
        let tb = blur(&gb, w, h, &k);
        let tc = blur(&gc, w, h, &k);
        (0..n).map(|i| ta[i] + 2.0 * x[i] * tb[i] + y[i] * tc[i]).collect()
    });
    (s, grad)
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &Grid<Vec3>, b: &Grid<Vec3>) -> f64 {
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for c in 0..3 {
        let (s, _) = ssim_channel(&channel(a, c), &channel(b, c), w, h, None);
        total += s.iter().sum::<f64>();
    }
    total / (3 * w * h) as f64
}

/// Forward differences; zero on the last column/row.
fn forward_diff(img: &Grid<Vec3>, x: usize, y: usize) -> (Vec3, Vec3) {
    let p = *img.get(x, y);
    let gx = if x + 1 < img.width { img.get(x + 1, y) - p } else { Vec3::zeros() };
    let gy = if y + 1 < img.height { img.get(x, y + 1) - p } else { Vec3::zeros() };
    (gx, gy)
}

/// Per-pixel edge loss: channel mean of the smoothed gradient-difference magnitude.
pub fn edge_map(a: &Grid<Vec3>, b: &Grid<Vec3>) -> Grid<f64> {
    Grid::from_fn(a.width, a.height, |x, y| {
        let (ax, ay) = forward_diff(a, x, y);
        let (bx, by) = forward_diff(b, x, y);
        let (dx, dy) = (ax - bx, ay - by);
        (0..3)
            .map(|c| (dx[c] * dx[c] + dy[c] * dy[c] + EDGE_EPS * EDGE_EPS).sqrt() - EDGE_EPS)
            .sum::<f64>()
            / 3.0
    })
}

pub fn l1_map(a: &Grid<Vec3>, b: &Grid<Vec3>) -> Grid<f64> {
    Grid::from_fn(a.width, a.height, |x, y| (a.get(x, y) - b.get(x, y)).abs().sum() / 3.0)
}

pub fn scale_regularizer(model: &SurfelModel) -> f64 {
    if model.is_empty() {
        return 0.0;
    }
    model.surfels.iter().map(|s| s.scale_u + s.scale_v).sum::<f64>() / (2 * model.len()) as f64
}

/// Camera-space point of pixel (x, y) at its alpha-normalised depth.
fn backprojected(render: &RenderOutput, view: &CameraView, x: usize, y: usize) -> Option<(Vec3, Vec3, f64, f64)> {
    let a = *render.alpha.get(x, y);
    if a <= NORMAL_MIN_ALPHA {
        return None;
    }
    let d = *render.depth.get(x, y);
    let ray = crate::renderer::pixel_ray(view, x, y);
    Some((ray * (d / a), ray, d, a))
}

/// Normal of the expected-depth surface at pixel (x, y), facing the camera.
pub fn depth_normal(render: &RenderOutput, view: &CameraView, x: usize, y: usize) -> Option<Vec3> {
    depth_normal_parts(render, view, x, y).map(|p| p.normal)
}

struct DepthNormal {
    normal: Vec3,
    m: Vec3,
    dx: Vec3,
    dy: Vec3,
    pts: [(usize, usize, Vec3, f64, f64); 3],
}

fn depth_normal_parts(render: &RenderOutput, view: &CameraView, x: usize, y: usize) -> Option<DepthNormal> {
    if x + 1 >= render.width() || y + 1 >= render.height() {
        return None;
    }
    let (p0, r0, d0, a0) = backprojected(render, view, x, y)?;
    let (p1, r1, d1, a1) = backprojected(render, view, x + 1, y)?;
    let (p2, r2, d2, a2) = backprojected(render, view, x, y + 1)?;
    let dx = p1 - p0;
    let dy = p2 - p0;
    let m = dx.cross(&dy);
    let len = m.norm();
    if !(len > 1e-30) {
        return None;
    }
    Some(DepthNormal {
        normal: -m / len,
        m,
        dx,
        dy,
        pts: [(x, y, r0, d0, a0), (x + 1, y, r1, d1, a1), (x, y + 1, r2, d2, a2)],
    })
}

/// Loss value and per-pixel upstream gradients for one rendered view.
pub struct Evaluation {
    pub losses: LossBreakdown,
    pub pixel_grads: Option<PixelGrads>,
}

/// Evaluates the objective for `render` of `view`. With `want_grads`, the
/// gradient with respect to the render output is returned as well.
pub fn evaluate(
    render: &RenderOutput,
    view: &CameraView,
    model: &SurfelModel,
    cfg: &PipelineConfig,
    want_grads: bool,
) -> Result<Evaluation> {
    let (w, h) = (render.width(), render.height());
    if (w, h) != (view.image.width, view.image.height) || !view.image.same_shape(&view.mask) {
        return Err(Error::Input("render, image and mask dimensions differ".into()));
    }
    let geometric = cfg.w_dist > 0.0 || cfg.w_normal > 0.0;
    if geometric && !render.has_fragments {
        return Err(Error::Config(
            "depth distortion and normal consistency need blend records; render with fragments".into(),
        ));
    }
    let npix = (w * h) as f64;
    let lambda = cfg.lambda_dssim;
    let weight: Vec<f64> = view.mask.data.iter().map(|&m| PipelineConfig::photometric_weight(m)).collect();
    let comp: Vec<bool> = view.mask.data.iter().map(|&m| m == 0).collect();
    let ncomp = comp.iter().filter(|&&c| c).count();

    let pred = &render.color;
    let gt = &view.image;
    let l1 = l1_map(pred, gt);
    let edge = edge_map(pred, gt);

    let mut grads = want_grads.then(|| PixelGrads::zeros(w, h));

    // SSIM per channel, with the gradient of lambda * weighted mean(1 - ssim).
    let ssim_coeff: Vec<f64> = weight.iter().map(|wt| lambda * wt / (3.0 * npix)).collect();
    let mut one_minus_ssim = vec![0.0; w * h];
    for c in 0..3 {
        let (s, g) = ssim_channel(
            &channel(pred, c),
            &channel(gt, c),
            w,
            h,
            want_grads.then_some(ssim_coeff.as_slice()),
        );
        for i in 0..w * h {
            one_minus_ssim[i] += (1.0 - s[i]) / 3.0;
        }
        if let (Some(pg), Some(g)) = (grads.as_mut(), g) {
            for i in 0..w * h {
                pg.color.data[i][c] += g[i];
            }
        }
    }

    let mean_w = |m: &[f64]| m.iter().zip(&weight).map(|(v, wt)| v * wt).sum::<f64>() / npix;
    let l1_v = mean_w(&l1.data);
    let dssim_v = mean_w(&one_minus_ssim);
    let edge_v = mean_w(&edge.data);

    if let Some(pg) = grads.as_mut() {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let c1 = (1.0 - lambda) * weight[i] / (3.0 * npix);
                let d = pred.data[i] - gt.data[i];
                pg.color.data[i] += d.map(|v| if v > 0.0 { c1 } else if v < 0.0 { -c1 } else { 0.0 });

                let ce = cfg.w_edge * weight[i] / (3.0 * npix);
                if ce == 0.0 {
                    continue;
                }
                let (ax, ay) = forward_diff(pred, x, y);
                let (bx, by) = forward_diff(gt, x, y);
                let (dx, dy) = (ax - bx, ay - by);
                let mut gdx = Vec3::zeros();
                let mut gdy = Vec3::zeros();
                for c in 0..3 {
                    let mag = (dx[c] * dx[c] + dy[c] * dy[c] + EDGE_EPS * EDGE_EPS).sqrt();
                    gdx[c] = ce * dx[c] / mag;
                    gdy[c] = ce * dy[c] / mag;
                }
                if x + 1 < w {
                    pg.color.data[i + 1] += gdx;
                    pg.color.data[i] -= gdx;
                }
                if y + 1 < h {
                    pg.color.data[i + w] += gdy;
                    pg.color.data[i] -= gdy;
                }
            }
        }
    }

    let mut l_dist = 0.0;
    let mut l_normal = 0.0;
    if geometric && ncomp > 0 {
        let inv = 1.0 / ncomp as f64;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !comp[i] {
                    continue;
                }
                l_dist += render.distortion.data[i] * inv;
                if let Some(pg) = grads.as_mut() {
                    pg.distortion.data[i] = cfg.w_dist * inv;
                }
                if cfg.w_normal == 0.0 {
                    continue;
                }
                let Some(dn) = depth_normal_parts(render, view, x, y) else {
                    continue;
                };
                let frags = render.blend_records(x, y);
                let mut nsum = Vec3::zeros();
                let mut wsum = 0.0;
                for f in frags {
                    nsum += render.camera_surfels[f.id as usize].face_normal * f.weight;
                    wsum += f.weight;
                }
                l_normal += (wsum - nsum.dot(&dn.normal)) * inv;
                if let Some(pg) = grads.as_mut() {
                    let coeff = cfg.w_normal * inv;
                    pg.normal_weight.data[i] = coeff;
                    pg.normal_target.data[i] = dn.normal;
                    // Target normal N = -m/|m| with m = dx x dy.
                    let g_n = -nsum * coeff;
                    let len = dn.m.norm();
                    let mhat = dn.m / len;
                    let g_m = -(g_n - mhat * mhat.dot(&g_n)) / len;
                    let g_dx = dn.dy.cross(&g_m);
                    let g_dy = g_m.cross(&dn.dx);
                    let g_pts = [-(g_dx + g_dy), g_dx, g_dy];
                    for ((px, py, ray, d, a), gp) in dn.pts.iter().zip(g_pts) {
                        let j = py * w + px;
                        let gr = gp.dot(ray);
                        pg.depth.data[j] += gr / a;
                        pg.alpha.data[j] += -gr * d / (a * a);
                    }
                }
            }
        }
    }

    let r_scale = scale_regularizer(model);
    let l_c = (1.0 - lambda) * l1_v + lambda * dssim_v;
    let mut losses = LossBreakdown {
        l1: l1_v,
        dssim: dssim_v,
        l_c,
        l_edge: edge_v,
        r_scale,
        l_dist,
        l_normal,
        total: 0.0,
    };
    losses.total = losses.recompute_total(cfg);
    Ok(Evaluation {
        losses,
        pixel_grads: grads,
    })
}

pub fn compute_losses(
    render: &RenderOutput,
    view: &CameraView,
    model: &SurfelModel,
    cfg: &PipelineConfig,
) -> Result<LossBreakdown> {
    Ok(evaluate(render, view, model, cfg, false)?.losses)
}

/// Total objective and its gradient with respect to every surfel parameter.
pub fn objective_gradient(
    render: &RenderOutput,
    view: &CameraView,
    model: &SurfelModel,
    cfg: &PipelineConfig,
) -> Result<(LossBreakdown, Vec<SurfelGrad>)> {
    let ev = evaluate(render, view, model, cfg, true)?;
    let pg = ev.pixel_grads.expect("requested");
    let mut grads = render_backward(view, render, &pg);
    if !model.is_empty() {
        let c = cfg.w_scale / (2 * model.len()) as f64;
        for (g, s) in grads.iter_mut().zip(&model.surfels) {
            g.log_scale[0] += c * s.scale_u;
            g.log_scale[1] += c * s.scale_v;
        }
    }
    Ok((ev.losses, grads))
}
