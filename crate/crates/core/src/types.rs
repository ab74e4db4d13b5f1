//! Shared value types of the pipeline and their invariants.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Anything that can enumerate the ways it breaks its own invariants.
pub trait Validate {
    fn violations(&self) -> Vec<String>;

    fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PointSource {
    #[default]
    Lidar,
    Completed,
}

impl PointSource {
    pub fn code(self) -> u8 {
        match self {
            PointSource::Lidar => 0,
            PointSource::Completed => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PointSource::Lidar),
            1 => Some(PointSource::Completed),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub position: Vec3,
    /// Raw inverse-density score, normalised by the cloud spacing.
    pub ambiguity: f64,
    pub high_ambiguity: bool,
    pub source: PointSource,
}

impl ScanPoint {
    pub fn lidar(position: Vec3) -> Self {
        Self {
            position,
            ambiguity: 0.0,
            high_ambiguity: false,
            source: PointSource::Lidar,
        }
    }

    pub fn completed(position: Vec3) -> Self {
        Self {
            source: PointSource::Completed,
            ..Self::lidar(position)
        }
    }
}

/// Axis-aligned box. An empty box has `min > max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|i| self.min[i] > self.max[i])
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> Vec3 {
        if self.is_empty() {
            Vec3::zeros()
        } else {
            self.max - self.min
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<ScanPoint>,
    /// Typical inter-point spacing in meters.
    pub delta: f64,
    pub bbox: Aabb,
}

impl PointCloud {
    pub fn new(points: Vec<ScanPoint>, delta: f64) -> Self {
        let bbox = Aabb::from_points(points.iter().map(|p| &p.position));
        Self {
            points,
            delta,
            bbox,
        }
    }

    pub fn from_positions(positions: &[Vec3], delta: f64) -> Self {
        Self::new(positions.iter().copied().map(ScanPoint::lidar).collect(), delta)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn recompute_bbox(&mut self) {
        self.bbox = Aabb::from_points(self.points.iter().map(|p| &p.position));
    }

    /// Keeps the points for which `keep` returns true, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(usize, &ScanPoint) -> bool) -> PointCloud {
        let points = self
            .points
            .iter()
            .enumerate()
            .filter(|(i, p)| keep(*i, p))
            .map(|(_, p)| *p)
            .collect();
        PointCloud::new(points, self.delta)
    }
}

impl Validate for PointCloud {
    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            out.push(format!("delta must be positive and finite, got {}", self.delta));
        }
        let bad: Vec<usize> = self
            .points
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.position.iter().all(|c| c.is_finite()))
            .map(|(i, _)| i)
            .collect();
        if !bad.is_empty() {
            out.push(format!("non-finite coordinates at point indices {bad:?}"));
        }
        let neg: Vec<usize> = self
            .points
            .iter()
            .enumerate()
            .filter(|(_, p)| !(p.ambiguity >= 0.0))
            .map(|(i, _)| i)
            .collect();
        if !neg.is_empty() {
            out.push(format!("negative or NaN ambiguity at point indices {neg:?}"));
        }
        if bad.is_empty() && !self.points.iter().all(|p| self.bbox.contains(&p.position)) {
            out.push("bbox does not enclose all points".to_string());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surfel {
    pub center: Vec3,
    pub tangent_u: Vec3,
    pub tangent_v: Vec3,
    pub scale_u: f64,
    pub scale_v: f64,
    pub opacity: f64,
    /// Diffuse color in [0, 1]^3.
    pub color: Vec3,
    pub ambiguity: f64,
    pub was_densified: bool,
    /// Running maximum of the screen-space positional gradient magnitude.
    pub grad_stat: f64,
    pub view_count: u32,
}

impl Surfel {
    pub fn new(center: Vec3, tangent_u: Vec3, tangent_v: Vec3, scale_u: f64, scale_v: f64) -> Self {
        Self {
            center,
            tangent_u,
            tangent_v,
            scale_u,
            scale_v,
            opacity: 1.0,
            color: Vec3::repeat(0.5),
            ambiguity: 0.0,
            was_densified: false,
            grad_stat: 0.0,
            view_count: 0,
        }
    }

    pub fn normal(&self) -> Vec3 {
        self.tangent_u.cross(&self.tangent_v)
    }

    pub fn max_scale(&self) -> f64 {
        self.scale_u.max(self.scale_v)
    }

    /// Re-orthonormalises the tangent frame (Gram-Schmidt on `tangent_u`).
    pub fn orthonormalize(&mut self) {
        let u = self.tangent_u.normalize();
        let v = (self.tangent_v - u * u.dot(&self.tangent_v)).normalize();
        self.tangent_u = u;
        self.tangent_v = v;
    }
}

impl Validate for Surfel {
    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.center.iter().all(|c| c.is_finite()) {
            out.push("non-finite center".into());
        }
        if (self.tangent_u.norm() - 1.0).abs() > 1e-6 || (self.tangent_v.norm() - 1.0).abs() > 1e-6 {
            out.push("tangent vectors are not unit length".into());
        }
        if self.tangent_u.dot(&self.tangent_v).abs() > 1e-6 {
            out.push("tangent vectors are not orthogonal".into());
        }
        if !(self.scale_u > 0.0 && self.scale_v > 0.0) {
            out.push(format!("scales must be positive ({}, {})", self.scale_u, self.scale_v));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            out.push(format!("opacity {} outside [0, 1]", self.opacity));
        }
        if !(self.ambiguity >= 0.0) {
            out.push("negative ambiguity".into());
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurfelModel {
    pub surfels: Vec<Surfel>,
}

impl SurfelModel {
    pub fn new(surfels: Vec<Surfel>) -> Self {
        Self { surfels }
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn centers(&self) -> Vec<Vec3> {
        self.surfels.iter().map(|s| s.center).collect()
    }
}

impl Validate for SurfelModel {
    fn violations(&self) -> Vec<String> {
        self.surfels
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.violations().into_iter().map(move |v| format!("surfel {i}: {v}")))
            .collect()
    }
}

/// Dense row-major 2D map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        let w = self.width;
        &mut self.data[y * w + x]
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square-pixel pinhole with the principal point at the image center.
    pub fn from_fov(width: usize, height: usize, fov_x_rad: f64) -> Self {
        let fx = width as f64 / (2.0 * (fov_x_rad * 0.5).tan());
        Self {
            fx,
            fy: fx,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
        }
    }

    /// Camera-space ray direction (z = 1) through continuous image coordinates.
    pub fn ray(&self, px: f64, py: f64) -> Vec3 {
        Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, cam: &Vec3) -> (f64, f64) {
        (self.fx * cam.x / cam.z + self.cx, self.fy * cam.y / cam.z + self.cy)
    }
}

/// Rigid world-to-camera transform: `x_cam = rotation * x_world + translation`.
/// Camera looks along +z, image x to the right, image y down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::x());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self {
            rotation,
            translation: -(rotation * eye),
        }
    }

    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation * world + self.translation
    }

    pub fn to_world_dir(&self, cam_dir: &Vec3) -> Vec3 {
        self.rotation.transpose() * cam_dir
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub id: String,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub image: Grid<Vec3>,
    pub normal_map: Option<Grid<Vec3>>,
    /// Expected angular error of the normals, radians.
    pub angular_error_map: Option<Grid<f64>>,
    pub uncertainty: Grid<f64>,
    /// 1 marks pixels of interest for completion; the complement is `1 - mask`.
    pub mask: Grid<u8>,
    pub sampling_weight: f64,
}

impl CameraView {
    pub fn new(id: impl Into<String>, intrinsics: Intrinsics, pose: Pose, image: Grid<Vec3>) -> Self {
        let (w, h) = (image.width, image.height);
        Self {
            id: id.into(),
            intrinsics,
            pose,
            image,
            normal_map: None,
            angular_error_map: None,
            uncertainty: Grid::filled(w, h, 0.0),
            mask: Grid::filled(w, h, 0),
            sampling_weight: 1.0,
        }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Projects a world point; `None` when behind the camera or outside the image.
    pub fn project_inside(&self, world: &Vec3) -> Option<(f64, f64, f64)> {
        let c = self.pose.to_camera(world);
        if c.z <= 0.0 {
            return None;
        }
        let (u, v) = self.intrinsics.project(&c);
        let inside = u >= 0.0 && v >= 0.0 && u < self.width() as f64 && v < self.height() as f64;
        inside.then_some((u, v, c.z))
    }

    pub fn complement_mask(&self) -> Grid<u8> {
        self.mask.map(|m| 1 - m)
    }
}

impl Validate for CameraView {
    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        if self.image.width != w || self.image.height != h {
            out.push(format!("image is {}x{}, intrinsics say {w}x{h}", self.image.width, self.image.height));
        }
        if !self.image.same_shape(&self.uncertainty) || !self.image.same_shape(&self.mask) {
            out.push("image, uncertainty and mask dimensions differ".into());
        }
        if let Some(n) = &self.normal_map {
            if !n.same_shape(&self.image) {
                out.push("normal map dimensions differ from the image".into());
            }
        }
        if let Some(a) = &self.angular_error_map {
            if !a.same_shape(&self.image) {
                out.push("angular error map dimensions differ from the image".into());
            }
        }
        if self.mask.data.iter().any(|&m| m > 1) {
            out.push("mask contains values other than 0 and 1".into());
        }
        if self.uncertainty.data.iter().any(|u| !(0.0..=1.0).contains(u)) {
            out.push("uncertainty outside [0, 1]".into());
        }
        if !(self.sampling_weight >= 0.0) {
            out.push("negative sampling weight".into());
        }
        out
    }
}

macro_rules! pipeline_config {
    ($( $(#[doc = $doc:literal])* $name:ident : $ty:ty = $default:expr, )*) => {
        /// All tunables of the pipeline. Serialises to a flat `key = value` text file.
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        pub struct PipelineConfig {
            $( $(#[doc = $doc])* pub $name: $ty, )*
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                Self { $( $name: $default, )* }
            }
        }

        impl PipelineConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($name) ),*];

            /// Sets one field from its textual value. Returns `Ok(false)` for unknown keys.
            pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
                match key {
                    $( stringify!($name) => {
                        self.$name = value.trim().parse::<$ty>().map_err(|e| {
                            Error::Config(format!("`{key}`: cannot parse `{value}`: {e}"))
                        })?;
                        Ok(true)
                    } )*
                    _ => Ok(false),
                }
            }

            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $( let _ = writeln!(s, "{} = {}", stringify!($name), self.$name); )*
                s
            }
        }
    };
}

pipeline_config! {
    /// Ambiguity threshold applied to the raw, spacing-normalised score.
    tau: f64 = 0.04,
    uncertainty_threshold: f64 = 0.2,
    lambda_dssim: f64 = 0.4,
    /// Weight of the image-gradient (edge) loss.
    w_edge: f64 = 0.2,
    /// Weight of the scale regulariser (1/m).
    w_scale: f64 = 1.0,
    /// Weight of the depth-distortion loss (1/m).
    w_dist: f64 = 100.0,
    w_normal: f64 = 0.05,
    iterations: usize = 25000,
    densify_start: usize = 100,
    densify_interval: usize = 100,
    densify_until: usize = 15000,
    densify_grad_threshold: f64 = 0.0002,
    /// Surfels larger than this fraction of the scene extent split instead of clone.
    percent_dense: f64 = 0.01,
    opacity_reset_interval: usize = 7500,
    density_recalc_interval: usize = 8000,
    noise_lr: f64 = 20.0,
    noise_lr_final: f64 = 0.2,
    noise_k: f64 = 100.0,
    noise_t: f64 = 0.995,
    prune_opacity_base: f64 = 0.005,
    prune_opacity_factor: f64 = 100.0,
    knn_k_ambiguity: usize = 3,
    knn_k_filter: usize = 5,
    density_scale_f: f64 = 1000.0,
    keep_fraction_low: f64 = 0.1,
    /// Multiply the initial surfel scale formula by the cloud spacing.
    scale_in_delta_units: bool = true,
    initial_opacity: f64 = 0.1,
    normal_knn: usize = 8,
    lr_position: f64 = 1.6e-4,
    lr_position_final: f64 = 1.6e-6,
    lr_rotation: f64 = 1e-3,
    lr_scale: f64 = 5e-3,
    lr_opacity: f64 = 0.05,
    lr_color: f64 = 2.5e-3,
    t_min: f64 = 0.01,
    t_max: f64 = 3.0,
    scale_filter_multiplier: f64 = 10.0,
    /// 0 selects the density-matched default.
    points_per_surfel: usize = 0,
    bridge_fraction: f64 = 0.25,
    f1_threshold: f64 = 0.005,
    chunk_extension: f64 = 0.20,
    max_surfels: usize = 2_000_000,
    rng_seed: u64 = 0,
}

impl PipelineConfig {
    /// Parses a flat `key = value` file. Keys containing a `.` belong to other
    /// tools (e.g. `run.cloud`) and are ignored; any other unknown key is an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_key_values(text)? {
            if !cfg.set(&key, &value)? && !key.contains('.') {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Weight table for the per-pixel photometric term: 1 inside the mask, 0.5 outside.
    pub fn photometric_weight(mask: u8) -> f64 {
        0.5 + 0.5 * f64::from(mask)
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let content = line.split('#').next().unwrap_or("").trim();
        if !content.is_empty() {
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(offset, format!("expected `key = value`, got `{content}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        offset += line.len();
    }
    Ok(out)
}

impl Validate for PipelineConfig {
    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let non_negative = [
            ("tau", self.tau),
            ("uncertainty_threshold", self.uncertainty_threshold),
            ("lambda_dssim", self.lambda_dssim),
            ("w_edge", self.w_edge),
            ("w_scale", self.w_scale),
            ("w_dist", self.w_dist),
            ("w_normal", self.w_normal),
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("percent_dense", self.percent_dense),
            ("noise_lr", self.noise_lr),
            ("noise_lr_final", self.noise_lr_final),
            ("noise_k", self.noise_k),
            ("prune_opacity_base", self.prune_opacity_base),
            ("prune_opacity_factor", self.prune_opacity_factor),
            ("density_scale_f", self.density_scale_f),
            ("lr_position", self.lr_position),
            ("lr_position_final", self.lr_position_final),
            ("lr_rotation", self.lr_rotation),
            ("lr_scale", self.lr_scale),
            ("lr_opacity", self.lr_opacity),
            ("lr_color", self.lr_color),
            ("t_min", self.t_min),
            ("t_max", self.t_max),
            ("scale_filter_multiplier", self.scale_filter_multiplier),
            ("bridge_fraction", self.bridge_fraction),
            ("f1_threshold", self.f1_threshold),
            ("chunk_extension", self.chunk_extension),
            ("initial_opacity", self.initial_opacity),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                out.push(format!("{name} must be finite and >= 0, got {value}"));
            }
        }
        if self.iterations == 0 {
            out.push("iterations must be > 0".into());
        }
        if !(self.noise_t > 0.0 && self.noise_t < 1.0) {
            out.push(format!("noise_t must lie in (0, 1), got {}", self.noise_t));
        }
        if !(self.keep_fraction_low > 0.0 && self.keep_fraction_low <= 1.0) {
            out.push(format!("keep_fraction_low must lie in (0, 1], got {}", self.keep_fraction_low));
        }
        if self.initial_opacity > 1.0 {
            out.push("initial_opacity must be <= 1".into());
        }
        if self.bridge_fraction > 1.0 {
            out.push("bridge_fraction must be <= 1".into());
        }
        if self.knn_k_ambiguity == 0 || self.knn_k_filter == 0 {
            out.push("knn k values must be >= 1".into());
        }
        if self.t_min > self.t_max {
            out.push("t_min must not exceed t_max".into());
        }
        out
    }
}
