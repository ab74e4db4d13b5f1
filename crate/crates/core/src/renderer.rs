//! Ray-splat rasteriser for surfels with an analytic backward pass.
//!
//! Every pixel casts one ray through its center, intersects it with the plane
//! of each candidate surfel and blends the fragments front to back. The
//! backward pass differentiates color, depth, alpha, the per-ray depth
//! distortion and the normal-consistency term with respect to the surfel
//! parameters.

use crate::geometry::median;
use crate::parallel::map_indices;
use crate::types::{CameraView, Grid, SurfelModel, Surfel, Vec3};

/// Fragments contributing less than this are skipped.
pub const MIN_CONTRIBUTION: f64 = 1.0 / 255.0;

/// Minimum projected footprint of a surfel, in pixels.
pub const MIN_FOOTPRINT_PX: f64 = 0.5;

/// Half-size of the culling box in standard deviations: the radius at which
/// the Gaussian drops to [`MIN_CONTRIBUTION`].
pub fn cull_sigma() -> f64 {
    (2.0 * 255f64.ln()).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub background: Vec3,
    pub near: f64,
    /// Keep per-pixel fragment lists (needed for the backward pass and the
    /// geometric losses).
    pub keep_fragments: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: Vec3::zeros(),
            near: 1e-3,
            keep_fragments: true,
        }
    }
}

/// One blended surfel along a pixel ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub id: u32,
    /// Camera-space depth of the intersection.
    pub z: f64,
    pub u: f64,
    pub v: f64,
    /// Gaussian value at (u, v).
    pub g: f64,
    /// opacity * g
    pub alpha: f64,
    /// Transmittance in front of this fragment.
    pub transmittance: f64,
    /// Blend weight alpha * transmittance.
    pub weight: f64,
}

/// A surfel expressed in one camera's frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraSurfel {
    pub center: Vec3,
    pub tangent_u: Vec3,
    pub tangent_v: Vec3,
    /// `tangent_u x tangent_v`, as stored.
    pub normal: Vec3,
    /// Normal flipped towards the camera.
    pub face_normal: Vec3,
    pub scale_u: f64,
    pub scale_v: f64,
    pub clamped_u: bool,
    pub clamped_v: bool,
    pub opacity: f64,
    pub color: Vec3,
}

impl CameraSurfel {
    pub fn new(s: &Surfel, view: &CameraView, clamp_footprint: bool) -> Self {
        let r = &view.pose.rotation;
        let center = view.pose.to_camera(&s.center);
        let tangent_u = r * s.tangent_u;
        let tangent_v = r * s.tangent_v;
        let normal = tangent_u.cross(&tangent_v);
        let face_normal = if normal.dot(&center) > 0.0 { -normal } else { normal };
        let min_scale = if clamp_footprint {
            MIN_FOOTPRINT_PX * center.z / view.intrinsics.fx
        } else {
            0.0
        };
        Self {
            center,
            tangent_u,
            tangent_v,
            normal,
            face_normal,
            scale_u: s.scale_u.max(min_scale),
            scale_v: s.scale_v.max(min_scale),
            clamped_u: min_scale > s.scale_u,
            clamped_v: min_scale > s.scale_v,
            opacity: s.opacity,
            color: s.color,
        }
    }

    /// Intersection of the camera-space ray `t * dir` with the surfel plane, as
    /// (u, v, z) in units of the (effective) scales.
    pub fn intersect(&self, dir: &Vec3, near: f64) -> Option<(f64, f64, f64)> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&self.center) / denom;
        let z = t * dir.z;
        if !(z > near) {
            return None;
        }
        let r = dir * t - self.center;
        Some((self.tangent_u.dot(&r) / self.scale_u, self.tangent_v.dot(&r) / self.scale_v, z))
    }

    /// Inclusive pixel bounds `(x0, x1, y0, y1)` of the region where the
    /// surfel can reach [`MIN_CONTRIBUTION`], or `None` if it is off screen.
    fn pixel_bounds(&self, view: &CameraView, near: f64) -> Option<(usize, usize, usize, usize)> {
        let (w, h) = (view.width(), view.height());
        if w == 0 || h == 0 || self.center.z <= near {
            return None;
        }
        let k = cull_sigma();
        let half = Vec3::from_fn(|i, _| {
            k * ((self.scale_u * self.tangent_u[i]).powi(2) + (self.scale_v * self.tangent_v[i]).powi(2)).sqrt()
        });
        if self.center.z - half.z <= near {
            return Some((0, w - 1, 0, h - 1));
        }
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    let c = self.center + Vec3::new(sx * half.x, sy * half.y, sz * half.z);
                    let (u, v) = view.intrinsics.project(&c);
                    umin = umin.min(u);
                    umax = umax.max(u);
                    vmin = vmin.min(v);
                    vmax = vmax.max(v);
                }
            }
        }
        let lo = |m: f64| (m - 0.5).ceil().max(0.0);
        let hi = |m: f64, n: usize| (m - 0.5).floor().min(n as f64 - 1.0);
        let (x0, x1, y0, y1) = (lo(umin), hi(umax, w), lo(vmin), hi(vmax, h));
        if x0 > x1 || y0 > y1 || !x0.is_finite() || !y0.is_finite() {
            return None;
        }
        Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
    }
}

/// Camera-space direction (z = 1) of the ray through the center of pixel (x, y).
pub fn pixel_ray(view: &CameraView, x: usize, y: usize) -> Vec3 {
    view.intrinsics.ray(x as f64 + 0.5, y as f64 + 0.5)
}

/// Intersects the ray through continuous image coordinates `pixel` with the
/// surfel plane. Returns local coordinates (u, v) in units of the surfel's
/// scales and the camera-space depth z.
pub fn intersect(surfel: &Surfel, view: &CameraView, pixel: (f64, f64)) -> Option<(f64, f64, f64)> {
    let cs = CameraSurfel::new(surfel, view, false);
    cs.intersect(&view.intrinsics.ray(pixel.0, pixel.1), 0.0)
}

pub fn gaussian(u: f64, v: f64) -> f64 {
    (-0.5 * (u * u + v * v)).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: Grid<Vec3>,
    /// Weight-blended depth (not normalised by alpha).
    pub depth: Grid<f64>,
    /// Normalised blended camera-space normal; zero where nothing was hit.
    pub normal: Grid<Vec3>,
    pub alpha: Grid<f64>,
    /// Per-pixel depth distortion `sum_{i<j} w_i w_j |z_i - z_j|`.
    pub distortion: Grid<f64>,
    /// Per-pixel fragment lists, sorted by (z, id); empty unless kept.
    pub offsets: Vec<usize>,
    pub fragments: Vec<Fragment>,
    pub camera_surfels: Vec<CameraSurfel>,
    pub background: Vec3,
    pub near: f64,
    pub has_fragments: bool,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    /// Blend records of pixel (x, y) in blending order.
    pub fn blend_records(&self, x: usize, y: usize) -> &[Fragment] {
        if !self.has_fragments {
            return &[];
        }
        let i = y * self.width() + x;
        &self.fragments[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Alpha-normalised depth, `None` where alpha is below `min_alpha`.
    pub fn expected_depth(&self, x: usize, y: usize, min_alpha: f64) -> Option<f64> {
        let a = *self.alpha.get(x, y);
        (a > min_alpha).then(|| self.depth.get(x, y) / a)
    }

    /// Median of the alpha-normalised depth over covered pixels.
    pub fn median_depth(&self) -> Option<f64> {
        let mut d: Vec<f64> = (0..self.height())
            .flat_map(|y| (0..self.width()).map(move |x| (x, y)))
            .filter_map(|(x, y)| self.expected_depth(x, y, 0.5))
            .collect();
        median(&mut d)
    }
}

struct Row {
    colors: Vec<Vec3>,
    depth: Vec<f64>,
    normal: Vec<Vec3>,
    alpha: Vec<f64>,
    distortion: Vec<f64>,
    counts: Vec<usize>,
    fragments: Vec<Fragment>,
}

/// Sum over ordered pairs `i < j` of `w_i w_j |z_i - z_j|` for fragments sorted by z.
pub fn distortion(frags: &[Fragment]) -> f64 {
    let (mut wsum, mut zsum, mut total) = (0.0, 0.0, 0.0);
    for f in frags {
        total += f.weight * (f.z * wsum - zsum);
        wsum += f.weight;
        zsum += f.weight * f.z;
    }
    total
}

pub fn render(model: &SurfelModel, view: &CameraView, opts: &RenderOptions) -> RenderOutput {
    let (w, h) = (view.width(), view.height());
    let cams: Vec<CameraSurfel> = model.surfels.iter().map(|s| CameraSurfel::new(s, view, true)).collect();

    let mut rows: Vec<Vec<(u32, usize, usize)>> = vec![Vec::new(); h];
    for (id, cs) in cams.iter().enumerate() {
        if let Some((x0, x1, y0, y1)) = cs.pixel_bounds(view, opts.near) {
            for row in &mut rows[y0..=y1] {
                row.push((id as u32, x0, x1));
            }
        }
    }

    let rendered: Vec<Row> = map_indices(h, |y| {
        let mut row = Row {
            colors: Vec::with_capacity(w),
            depth: Vec::with_capacity(w),
            normal: Vec::with_capacity(w),
            alpha: Vec::with_capacity(w),
            distortion: Vec::with_capacity(w),
            counts: Vec::with_capacity(w),
            fragments: Vec::new(),
        };
        let mut frags: Vec<Fragment> = Vec::new();
        for x in 0..w {
            let dir = pixel_ray(view, x, y);
            frags.clear();
            for &(id, x0, x1) in &rows[y] {
                if x < x0 || x > x1 {
                    continue;
                }
                let cs = &cams[id as usize];
                let Some((u, v, z)) = cs.intersect(&dir, opts.near) else {
                    continue;
                };
                let g = gaussian(u, v);
                if g < MIN_CONTRIBUTION {
                    continue;
                }
                frags.push(Fragment {
                    id,
                    z,
                    u,
                    v,
                    g,
                    alpha: cs.opacity * g,
                    transmittance: 0.0,
                    weight: 0.0,
                });
            }
            frags.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.id.cmp(&b.id)));
            let mut t = 1.0;
            let (mut c, mut d, mut n) = (Vec3::zeros(), 0.0, Vec3::zeros());
            for f in frags.iter_mut() {
                f.transmittance = t;
                f.weight = f.alpha * t;
                let cs = &cams[f.id as usize];
                c += cs.color * f.weight;
                d += f.z * f.weight;
                n += cs.face_normal * f.weight;
                t *= 1.0 - f.alpha;
            }
            c += opts.background * t;
            let nn = n.norm();
            row.colors.push(c);
            row.depth.push(d);
            row.normal.push(if nn > 0.0 { n / nn } else { Vec3::zeros() });
            row.alpha.push(1.0 - t);
            row.distortion.push(distortion(&frags));
            row.counts.push(frags.len());
            if opts.keep_fragments {
                row.fragments.extend_from_slice(&frags);
            }
        }
        row
    });

    let mut color = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut normal = Vec::with_capacity(w * h);
    let mut alpha = Vec::with_capacity(w * h);
    let mut dist = Vec::with_capacity(w * h);
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut fragments = Vec::new();
    offsets.push(0);
    for row in rendered {
        color.extend(row.colors);
        depth.extend(row.depth);
        normal.extend(row.normal);
        alpha.extend(row.alpha);
        dist.extend(row.distortion);
        for c in row.counts {
            let last = *offsets.last().expect("non-empty");
            offsets.push(last + if opts.keep_fragments { c } else { 0 });
        }
        fragments.extend(row.fragments);
    }
    fn grid<T>(width: usize, height: usize, data: Vec<T>) -> Grid<T> {
        Grid { width, height, data }
    }
    RenderOutput {
        color: grid(w, h, color),
        depth: grid(w, h, depth),
        normal: grid(w, h, normal),
        alpha: grid(w, h, alpha),
        distortion: grid(w, h, dist),
        offsets,
        fragments,
        camera_surfels: cams,
        background: opts.background,
        near: opts.near,
        has_fragments: opts.keep_fragments,
    }
}

/// Upstream gradients of a scalar loss with respect to the render output.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrads {
    pub color: Grid<Vec3>,
    pub depth: Grid<f64>,
    pub alpha: Grid<f64>,
    /// Coefficient of the per-pixel depth distortion in the loss.
    pub distortion: Grid<f64>,
    /// Coefficient of `sum_k w_k (1 - n_k . target)` in the loss.
    pub normal_weight: Grid<f64>,
    /// Target normal of the normal-consistency term (held fixed here; its
    /// dependence on depth and alpha belongs in `depth` and `alpha`).
    pub normal_target: Grid<Vec3>,
}

impl PixelGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: Grid::filled(width, height, Vec3::zeros()),
            depth: Grid::filled(width, height, 0.0),
            alpha: Grid::filled(width, height, 0.0),
            distortion: Grid::filled(width, height, 0.0),
            normal_weight: Grid::filled(width, height, 0.0),
            normal_target: Grid::filled(width, height, Vec3::zeros()),
        }
    }
}

/// Gradient with respect to one surfel's parameters.
///
/// `position` and `rotation` are world-frame; `rotation` is the derivative
/// with respect to an axis-angle increment applied to both tangents.
/// `opacity` is with respect to the opacity value itself.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SurfelGrad {
    pub position: Vec3,
    pub rotation: Vec3,
    pub log_scale: [f64; 2],
    pub opacity: f64,
    pub color: Vec3,
    /// Number of pixels the surfel contributed to.
    pub pixels: u32,
}

impl SurfelGrad {
    fn add(&mut self, o: &SurfelGrad) {
        self.position += o.position;
        self.rotation += o.rotation;
        self.log_scale[0] += o.log_scale[0];
        self.log_scale[1] += o.log_scale[1];
        self.opacity += o.opacity;
        self.color += o.color;
        self.pixels += o.pixels;
    }
}

/// Fixed number of row bands the backward pass reduces over; results do not
/// depend on how many threads execute them.
pub const BACKWARD_BANDS: usize = 8;

/// Normal-consistency value `sum_k w_k (1 - n_k . target)` of one pixel.
pub fn normal_consistency(out: &RenderOutput, x: usize, y: usize, target: &Vec3) -> f64 {
    out.blend_records(x, y)
        .iter()
        .map(|f| f.weight * (1.0 - out.camera_surfels[f.id as usize].face_normal.dot(target)))
        .sum()
}

pub fn render_backward(view: &CameraView, out: &RenderOutput, grads: &PixelGrads) -> Vec<SurfelGrad> {
    assert!(out.has_fragments, "backward pass needs fragments");
    let (w, h) = (out.width(), out.height());
    let n = out.camera_surfels.len();
    let fx = view.intrinsics.fx;
    let bands = BACKWARD_BANDS.min(h.max(1));
    let band_rows = h.div_ceil(bands).max(1);

    let partial: Vec<Vec<SurfelGrad>> = map_indices(bands, |b| {
        let mut acc = vec![SurfelGrad::default(); n];
        let mut gw: Vec<f64> = Vec::new();
        let mut gz: Vec<f64> = Vec::new();
        for y in b * band_rows..((b + 1) * band_rows).min(h) {
            for x in 0..w {
                let frags = out.blend_records(x, y);
                if frags.is_empty() {
                    continue;
                }
                let i = y * w + x;
                let gc = grads.color.data[i];
                let gd = grads.depth.data[i];
                let ga = grads.alpha.data[i];
                let wd = grads.distortion.data[i];
                let wn = grads.normal_weight.data[i];
                let target = grads.normal_target.data[i];
                let dir = pixel_ray(view, x, y);

                // Weight gradients including the pairwise distortion term.
                let total_w: f64 = frags.iter().map(|f| f.weight).sum();
                let total_wz: f64 = frags.iter().map(|f| f.weight * f.z).sum();
                let (mut w_before, mut wz_before) = (0.0, 0.0);
                gw.clear();
                gz.clear();
                for f in frags {
                    let cs = &out.camera_surfels[f.id as usize];
                    let w_after = total_w - w_before - f.weight;
                    let wz_after = total_wz - wz_before - f.weight * f.z;
                    let d_dist_dw = f.z * w_before - wz_before + wz_after - f.z * w_after;
                    let d_dist_dz = f.weight * (w_before - w_after);
                    gw.push(
                        gc.dot(&cs.color) + gd * f.z + ga + wd * d_dist_dw + wn * (1.0 - cs.face_normal.dot(&target)),
                    );
                    gz.push(gd * f.weight + wd * d_dist_dz);
                    w_before += f.weight;
                    wz_before += f.weight * f.z;
                }

                // Back-to-front composite of the weight gradients; the
                // background acts as a final fragment with alpha 1.
                let mut s = gc.dot(&out.background);
                for (k, f) in frags.iter().enumerate().rev() {
                    let d_alpha = f.transmittance * (gw[k] - s);
                    s = f.alpha * gw[k] + (1.0 - f.alpha) * s;

                    let cs = &out.camera_surfels[f.id as usize];
                    let g = &mut acc[f.id as usize];
                    g.pixels += 1;
                    g.color += gc * f.weight;
                    g.opacity += d_alpha * f.g;
                    let d_g = d_alpha * cs.opacity;
                    let gu = -d_g * f.g * f.u;
                    let gv = -d_g * f.g * f.v;

                    let nd = cs.normal.dot(&dir);
                    let r = dir * f.z - cs.center;
                    let dt_dp = cs.normal / nd;
                    let tud = cs.tangent_u.dot(&dir);
                    let tvd = cs.tangent_v.dot(&dir);
                    let du_dp = (dt_dp * tud - cs.tangent_u) / cs.scale_u;
                    let dv_dp = (dt_dp * tvd - cs.tangent_v) / cs.scale_v;
                    let dt_dw = -cs.normal.cross(&r) / nd;
                    let du_dw = (cs.tangent_u.cross(&r) + dt_dw * tud) / cs.scale_u;
                    let dv_dw = (cs.tangent_v.cross(&r) + dt_dw * tvd) / cs.scale_v;

                    let mut gp = dt_dp * gz[k] + du_dp * gu + dv_dp * gv;
                    let d_face = -target * (wn * f.weight);
                    let gr = dt_dw * gz[k] + du_dw * gu + dv_dw * gv + cs.face_normal.cross(&d_face);

                    let min_scale_dz = MIN_FOOTPRINT_PX / fx;
                    if cs.clamped_u {
                        gp.z += -f.u / cs.scale_u * gu * min_scale_dz;
                    } else {
                        g.log_scale[0] += -f.u * gu;
                    }
                    if cs.clamped_v {
                        gp.z += -f.v / cs.scale_v * gv * min_scale_dz;
                    } else {
                        g.log_scale[1] += -f.v * gv;
                    }
                    g.position += gp;
                    g.rotation += gr;
                }
            }
        }
        acc
    });

    let rt = view.pose.rotation.transpose();
    let mut total = vec![SurfelGrad::default(); n];
    for band in &partial {
        for (t, g) in total.iter_mut().zip(band) {
            t.add(g);
        }
    }
    for t in &mut total {
        t.position = rt * t.position;
        t.rotation = rt * t.rotation;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Intrinsics, Pose};

    fn view(w: usize, h: usize, eye: Vec3) -> CameraView {
        let k = Intrinsics::from_fov(w, h, 0.8);
        let pose = Pose::look_at(eye, Vec3::zeros(), Vec3::y());
        CameraView::new("v", k, pose, Grid::filled(w, h, Vec3::zeros()))
    }

    #[test]
    fn center_ray_hits_origin() {
        let v = view(65, 65, Vec3::new(0.0, 0.0, 5.0));
        let s = Surfel::new(Vec3::zeros(), Vec3::x(), Vec3::y(), 1.0, 1.0);
        let (u, w, z) = intersect(&s, &v, (v.intrinsics.cx, v.intrinsics.cy)).unwrap();
        assert!(u.abs() < 1e-12 && w.abs() < 1e-12);
        assert!((z - 5.0).abs() < 1e-12);
        assert_eq!(gaussian(u, w), 1.0);
    }

    #[test]
    fn ray_through_unit_x() {
        let v = view(65, 65, Vec3::new(0.0, 0.0, 5.0));
        let s = Surfel::new(Vec3::zeros(), Vec3::x(), Vec3::y(), 1.0, 1.0);
        let (px, py) = v.intrinsics.project(&v.pose.to_camera(&Vec3::x()));
        let (u, w, _) = intersect(&s, &v, (px, py)).unwrap();
        assert!((u - 1.0).abs() < 1e-12 && w.abs() < 1e-12);
        assert!((gaussian(u, w) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn parallel_ray_misses() {
        let v = view(9, 9, Vec3::new(0.0, 0.0, 5.0));
        let s = Surfel::new(Vec3::zeros(), Vec3::x(), Vec3::z(), 1.0, 1.0);
        assert!(intersect(&s, &v, (v.intrinsics.cx, v.intrinsics.cy)).is_none());
    }

    #[test]
    fn cull_radius() {
        assert!((gaussian(cull_sigma(), 0.0) - MIN_CONTRIBUTION).abs() < 1e-15);
    }
}
