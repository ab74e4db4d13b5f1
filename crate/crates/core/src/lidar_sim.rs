//! Synthetic LiDAR: ray-cast ground-truth scans and degraded scans with beam
//! divergence, mixed pixels, dark-surface dropout and range noise.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::median_nn_distance;
use crate::parallel::map_indices;
use crate::types::{Aabb, Mat3, PointCloud, ScanPoint, Validate, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub vertices: [Vec3; 3],
    pub albedo: f64,
    pub reflective: bool,
}

impl Triangle {
    pub fn area(&self) -> f64 {
        let [a, b, c] = self.vertices;
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    fn centroid(&self) -> Vec3 {
        (self.vertices[0] + self.vertices[1] + self.vertices[2]) / 3.0
    }

    /// Moller-Trumbore; returns the ray parameter of a hit with `t > t_min`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<f64> {
        let [a, b, c] = self.vertices;
        let e1 = b - a;
        let e2 = c - a;
        let p = dir.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - a;
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&e1);
        let v = dir.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) * inv;
        (t > t_min).then_some(t)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneTriangleSet {
    pub triangles: Vec<Triangle>,
}

impl Validate for SceneTriangleSet {
    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, t) in self.triangles.iter().enumerate() {
            if !(t.area() > 0.0) {
                out.push(format!("triangle {i} is degenerate"));
            }
            if !(0.0..=1.0).contains(&t.albedo) {
                out.push(format!("triangle {i} albedo {} outside [0, 1]", t.albedo));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
}

#[derive(Clone, Debug)]
struct BvhNode {
    bbox: Aabb,
    /// Leaf: `start..start + count` into `order`; inner: children at `start`, `start + 1`.
    start: usize,
    count: usize,
}

/// Bounding-volume hierarchy over a triangle set (median split, leaves of at
/// most four triangles).
pub struct Bvh<'a> {
    triangles: &'a [Triangle],
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 4;

fn triangle_box(t: &Triangle) -> Aabb {
    Aabb::from_points(t.vertices.iter())
}

fn union(a: &Aabb, b: &Aabb) -> Aabb {
    Aabb {
        min: a.min.inf(&b.min),
        max: a.max.sup(&b.max),
    }
}

impl<'a> Bvh<'a> {
    pub fn new(scene: &'a SceneTriangleSet) -> Self {
        let triangles = &scene.triangles[..];
        let mut bvh = Self {
            triangles,
            nodes: Vec::new(),
            order: (0..triangles.len()).collect(),
        };
        if !triangles.is_empty() {
            bvh.nodes.push(BvhNode {
                bbox: Aabb::empty(),
                start: 0,
                count: 0,
            });
            bvh.build(0, 0, triangles.len());
        }
        bvh
    }

    fn build(&mut self, node: usize, lo: usize, hi: usize) {
        let bbox = self.order[lo..hi]
            .iter()
            .map(|&i| triangle_box(&self.triangles[i]))
            .fold(Aabb::empty(), |a, b| union(&a, &b));
        if hi - lo <= LEAF_SIZE {
            self.nodes[node] = BvhNode {
                bbox,
                start: lo,
                count: hi - lo,
            };
            return;
        }
        let cb = Aabb::from_points(self.order[lo..hi].iter().map(|&i| self.triangles[i].centroid()).collect::<Vec<_>>().iter());
        let ext = cb.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (lo + hi) / 2;
        let tris = self.triangles;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            tris[a].centroid()[axis].total_cmp(&tris[b].centroid()[axis]).then(a.cmp(&b))
        });
        let left = self.nodes.len();
        for _ in 0..2 {
            self.nodes.push(BvhNode {
                bbox: Aabb::empty(),
                start: 0,
                count: 0,
            });
        }
        self.nodes[node] = BvhNode {
            bbox,
            start: left,
            count: 0,
        };
        self.build(left, lo, mid);
        self.build(left + 1, mid, hi);
    }

    fn slab(b: &Aabb, origin: &Vec3, inv: &Vec3, t_max: f64) -> bool {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (b.min[k] - origin[k]) * inv[k];
            let c = (b.max[k] - origin[k]) * inv[k];
            let (lo, hi) = if a <= c { (a, c) } else { (c, a) };
            // NaN from 0 * inf stays neutral here.
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
            if t0 > t1 {
                return false;
            }
        }
        true
    }

    /// Closest intersection along the ray `origin + t dir`, `t > 1e-9`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let limit = best.map_or(f64::INFINITY, |h| h.t);
            if !Self::slab(&node.bbox, origin, &inv, limit) {
                continue;
            }
            if node.count > 0 {
                for &ti in &self.order[node.start..node.start + node.count] {
                    if let Some(t) = self.triangles[ti].intersect(origin, dir, 1e-9) {
                        if best.is_none_or(|b| t < b.t || (t == b.t && ti < b.triangle)) {
                            best = Some(Hit { t, triangle: ti });
                        }
                    }
                }
            } else {
                stack.push(node.start);
                stack.push(node.start + 1);
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixedPixelPolicy {
    Drop,
    Average,
    FirstReturn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamModel {
    /// Full divergence angle along azimuth, radians.
    pub divergence_u: f64,
    /// Full divergence angle along elevation, radians.
    pub divergence_v: f64,
    pub subray_count: usize,
    pub mixed_pixel_policy: MixedPixelPolicy,
    pub min_albedo: f64,
    pub range_noise_sigma: f64,
}

impl Default for BeamModel {
    /// Velodyne VLP-16 divergence.
    fn default() -> Self {
        Self {
            divergence_u: 0.17_f64.to_radians(),
            divergence_v: 0.09_f64.to_radians(),
            subray_count: 16,
            mixed_pixel_policy: MixedPixelPolicy::Average,
            min_albedo: 0.05,
            range_noise_sigma: 0.0,
        }
    }
}

impl Validate for BeamModel {
    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.divergence_u >= 0.0 && self.divergence_v >= 0.0) {
            out.push("divergence angles must be non-negative".into());
        }
        if self.subray_count == 0 {
            out.push("subray_count must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.min_albedo) {
            out.push("min_albedo outside [0, 1]".into());
        }
        if !(self.range_noise_sigma >= 0.0) {
            out.push("range_noise_sigma must be non-negative".into());
        }
        out
    }
}

/// Footprint width `2 r tan(theta / 2)` of a beam with full divergence
/// angle `theta` at range `r`.
pub fn beam_footprint(divergence: f64, range: f64) -> f64 {
    2.0 * range * (0.5 * divergence).tan()
}

/// Azimuth/elevation grid of one scanner position (radians, inclusive ends).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPattern {
    pub az_min: f64,
    pub az_max: f64,
    pub az_step: f64,
    pub el_min: f64,
    pub el_max: f64,
    pub el_step: f64,
}

impl ScanPattern {
    fn steps(min: f64, max: f64, step: f64) -> usize {
        ((max - min) / step + 1e-9).floor() as usize + 1
    }

    pub fn beam_count(&self) -> usize {
        Self::steps(self.az_min, self.az_max, self.az_step) * Self::steps(self.el_min, self.el_max, self.el_step)
    }

    /// Azimuth and elevation of beam `i`.
    pub fn angles(&self, i: usize) -> (f64, f64) {
        let n_az = Self::steps(self.az_min, self.az_max, self.az_step);
        (
            self.az_min + (i % n_az) as f64 * self.az_step,
            self.el_min + (i / n_az) as f64 * self.el_step,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScannerPose {
    pub position: Vec3,
    /// Scanner-to-world rotation.
    #[serde(default = "Mat3::identity")]
    pub rotation: Mat3,
}

/// Unit direction and its azimuth/elevation tangents in the scanner frame.
fn beam_frame(az: f64, el: f64) -> (Vec3, Vec3, Vec3) {
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    (
        Vec3::new(ce * ca, ce * sa, se),
        Vec3::new(-sa, ca, 0.0),
        Vec3::new(-se * ca, -se * sa, ce),
    )
}

/// Angular offsets of the subrays inside the unit disk (Vogel spiral); a
/// single subray is the beam center.
pub fn subray_pattern(n: usize) -> Vec<(f64, f64)> {
    if n <= 1 {
        return vec![(0.0, 0.0)];
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let r = ((i as f64 + 0.5) / n as f64).sqrt();
            let th = i as f64 * golden;
            (r * th.cos(), r * th.sin())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanReport {
    pub beams: usize,
    pub gt_points: usize,
    pub degraded_points: usize,
    pub mixed: usize,
    pub dropped_mixed: usize,
    pub dropped_dark: usize,
    pub dropped_reflective: usize,
}

pub struct ScanResult {
    pub gt: PointCloud,
    pub degraded: PointCloud,
    /// The spacing used for the mixed-pixel test.
    pub delta: f64,
    pub report: ScanReport,
}

/// Everything `simulate` reads from a scan setup JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSetup {
    pub poses: Vec<ScannerPose>,
    pub pattern: ScanPattern,
    #[serde(default)]
    pub beam: BeamModel,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Applied to the degraded scan after simulation.
    #[serde(default)]
    pub removal: Vec<RemovalRule>,
}

enum Degraded {
    Point(Vec3, bool),
    Mixed,
    Dark,
    Reflective,
}

fn mix(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Casts every beam of every pose. `delta` sets the mixed-pixel threshold
/// (`3 delta`); `None` uses the median spacing of the ground-truth scan.
pub fn simulate_scan(
    scene: &SceneTriangleSet,
    poses: &[ScannerPose],
    pattern: &ScanPattern,
    beam: &BeamModel,
    delta: Option<f64>,
    seed: u64,
) -> Result<ScanResult> {
    scene.validate()?;
    beam.validate()?;
    if scene.triangles.is_empty() {
        return Err(Error::Input("scene has no triangles".into()));
    }
    if !(pattern.az_step > 0.0 && pattern.el_step > 0.0) {
        return Err(Error::Parameter("angular steps must be positive".into()));
    }
    let bvh = Bvh::new(scene);
    let per_pose = pattern.beam_count();
    let total = per_pose * poses.len();
    let subrays = subray_pattern(beam.subray_count);
    let (hu, hv) = ((0.5 * beam.divergence_u).tan(), (0.5 * beam.divergence_v).tan());

    let centers: Vec<Option<(Vec3, Vec3, Hit)>> = map_indices(total, |b| {
        let pose = &poses[b / per_pose];
        let (az, el) = pattern.angles(b % per_pose);
        let d = pose.rotation * beam_frame(az, el).0;
        bvh.intersect(&pose.position, &d).map(|h| (pose.position, d, h))
    });
    let gt_positions: Vec<Vec3> = centers.iter().flatten().map(|(o, d, h)| o + d * h.t).collect();
    if gt_positions.is_empty() {
        warn!("no beam hit the scene");
    }
    let delta = match delta {
        Some(d) => d,
        None => median_nn_distance(&gt_positions).unwrap_or(1.0),
    };
    let spread_limit = 3.0 * delta;

    let degraded: Vec<Option<Degraded>> = map_indices(total, |b| {
        let (origin, d, hit) = centers[b]?;
        let tri = &scene.triangles[hit.triangle];
        if tri.reflective {
            return Some(Degraded::Reflective);
        }
        if tri.albedo < beam.min_albedo {
            return Some(Degraded::Dark);
        }
        let pose = &poses[b / per_pose];
        let (az, el) = pattern.angles(b % per_pose);
        let (_, eu, ev) = beam_frame(az, el);
        let (eu, ev) = (pose.rotation * eu, pose.rotation * ev);
        let ranges: Vec<f64> = subrays
            .iter()
            .filter_map(|&(a, c)| {
                let dir = (d + eu * (a * hu) + ev * (c * hv)).normalize();
                bvh.intersect(&origin, &dir).map(|h| h.t)
            })
            .collect();
        let lo = ranges.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ranges.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mixed = ranges.len() > 1 && hi - lo > spread_limit;
        let range = if mixed {
            match beam.mixed_pixel_policy {
                MixedPixelPolicy::Drop => return Some(Degraded::Mixed),
                MixedPixelPolicy::Average => ranges.iter().sum::<f64>() / ranges.len() as f64,
                MixedPixelPolicy::FirstReturn => lo,
            }
        } else {
            hit.t
        };
        let noisy = if beam.range_noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, b));
            let g: f64 = StandardNormal.sample(&mut rng);
            range + beam.range_noise_sigma * g
        } else {
            range
        };
        Some(Degraded::Point(origin + d * noisy, mixed))
    });

    let mut report = ScanReport {
        beams: total,
        gt_points: gt_positions.len(),
        ..ScanReport::default()
    };
    let mut out = Vec::new();
    for r in degraded.into_iter().flatten() {
        match r {
            Degraded::Point(p, mixed) => {
                report.mixed += usize::from(mixed);
                out.push(ScanPoint::lidar(p));
            }
            Degraded::Mixed => {
                report.mixed += 1;
                report.dropped_mixed += 1;
            }
            Degraded::Dark => report.dropped_dark += 1,
            Degraded::Reflective => report.dropped_reflective += 1,
        }
    }
    report.degraded_points = out.len();
    Ok(ScanResult {
        gt: PointCloud::from_positions(&gt_positions, delta),
        degraded: PointCloud::new(out, delta),
        delta,
        report,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Box { min: Vec3, max: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

impl Region {
    pub fn contains(&self, p: &Vec3) -> bool {
        match self {
            Region::Box { min, max } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
            Region::Sphere { center, radius } => (p - center).norm() <= *radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalRule {
    pub region: Region,
    pub fraction: f64,
}

pub struct Degradation {
    pub kept: PointCloud,
    pub removed: PointCloud,
    /// Points matched by each rule.
    pub matched: Vec<usize>,
}

/// Removes each point matching a rule with that rule's probability (rules
/// draw independently).
pub fn degrade_cloud(gt: &PointCloud, rules: &[RemovalRule], seed: u64) -> Result<Degradation> {
    if let Some(r) = rules.iter().find(|r| !(0.0..=1.0).contains(&r.fraction)) {
        return Err(Error::Parameter(format!("removal fraction {} outside [0, 1]", r.fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matched = vec![0; rules.len()];
    let mut remove = vec![false; gt.len()];
    for (i, p) in gt.points.iter().enumerate() {
        for (j, r) in rules.iter().enumerate() {
            if r.region.contains(&p.position) {
                matched[j] += 1;
                let draw: f64 = rng.random();
                if draw < r.fraction {
                    remove[i] = true;
                }
            }
        }
    }
    for (j, &m) in matched.iter().enumerate() {
        if m == 0 {
            warn!("removal rule {j} matches no point");
        }
    }
    Ok(Degradation {
        kept: gt.filtered(|i, _| !remove[i]),
        removed: gt.filtered(|i, _| remove[i]),
        matched,
    })
}
