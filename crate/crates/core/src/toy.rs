//! Synthetic "missing bar" scene: a checkered ground plane with a thin
//! vertical bar whose scan points are mostly deleted, plus ray-cast views.

use crate::error::Result;
use crate::lidar_sim::{degrade_cloud, Bvh, Region, RemovalRule, SceneTriangleSet, Triangle};
use crate::types::{CameraView, Grid, Intrinsics, PointCloud, Pose, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    /// Lattice spacing of the ground-truth samples.
    pub delta: f64,
    /// Half side of the square plane, in multiples of `delta`.
    pub plane_half_cells: i64,
    /// Bar footprint corner and size, in multiples of `delta`.
    pub bar_min_cells: [i64; 2],
    pub bar_size_cells: [i64; 3],
    /// Fraction of bar samples deleted from the scan.
    pub removal_fraction: f64,
    pub checker_cells: i64,
    pub resolution: usize,
    pub fov_deg: f64,
    pub camera_distance: f64,
    pub elevations_deg: Vec<f64>,
    pub views_per_ring: usize,
    /// Supersampling factor per image axis.
    pub supersample: usize,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            delta: 0.005,
            plane_half_cells: 24,
            bar_min_cells: [4, 4],
            bar_size_cells: [4, 4, 20],
            removal_fraction: 0.9,
            checker_cells: 4,
            resolution: 64,
            fov_deg: 45.0,
            camera_distance: 0.32,
            elevations_deg: vec![25.0, 45.0],
            views_per_ring: 8,
            supersample: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Surface {
    Plane,
    Bar,
}

pub struct ToyScene {
    pub spec: ToySpec,
    pub mesh: SceneTriangleSet,
    /// Complete ground-truth samples.
    pub gt: PointCloud,
    /// The scan: ground truth minus the deleted bar samples.
    pub lidar: PointCloud,
    /// The deleted bar samples.
    pub removed: PointCloud,
    pub views: Vec<CameraView>,
}

const PLANE_LIGHT: [f64; 3] = [0.3, 0.5, 1.0];

impl ToySpec {
    pub fn bar_box(&self) -> (Vec3, Vec3) {
        let d = self.delta;
        let min = Vec3::new(self.bar_min_cells[0] as f64 * d, self.bar_min_cells[1] as f64 * d, 0.0);
        let max = Vec3::new(
            (self.bar_min_cells[0] + self.bar_size_cells[0]) as f64 * d,
            (self.bar_min_cells[1] + self.bar_size_cells[1]) as f64 * d,
            self.bar_size_cells[2] as f64 * d,
        );
        (min, max)
    }

    fn mesh(&self) -> (SceneTriangleSet, Vec<Surface>) {
        let h = self.plane_half_cells as f64 * self.delta;
        let mut tris = Vec::new();
        let mut kinds = Vec::new();
        let mut quad = |a: Vec3, b: Vec3, c: Vec3, d: Vec3, kind: Surface, albedo: f64| {
            for v in [[a, b, c], [a, c, d]] {
                tris.push(Triangle {
                    vertices: v,
                    albedo,
                    reflective: false,
                });
                kinds.push(kind);
            }
        };
        quad(
            Vec3::new(-h, -h, 0.0),
            Vec3::new(h, -h, 0.0),
            Vec3::new(h, h, 0.0),
            Vec3::new(-h, h, 0.0),
            Surface::Plane,
            0.6,
        );
        let (lo, hi) = self.bar_box();
        let p = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
        let (x0, y0, x1, y1, z1) = (lo.x, lo.y, hi.x, hi.y, hi.z);
        quad(p(x0, y0, 0.0), p(x1, y0, 0.0), p(x1, y0, z1), p(x0, y0, z1), Surface::Bar, 0.5);
        quad(p(x1, y0, 0.0), p(x1, y1, 0.0), p(x1, y1, z1), p(x1, y0, z1), Surface::Bar, 0.5);
        quad(p(x1, y1, 0.0), p(x0, y1, 0.0), p(x0, y1, z1), p(x1, y1, z1), Surface::Bar, 0.5);
        quad(p(x0, y1, 0.0), p(x0, y0, 0.0), p(x0, y0, z1), p(x0, y1, z1), Surface::Bar, 0.5);
        quad(p(x0, y0, z1), p(x1, y0, z1), p(x1, y1, z1), p(x0, y1, z1), Surface::Bar, 0.5);
        (SceneTriangleSet { triangles: tris }, kinds)
    }

    /// Lattice samples of the visible surfaces: plane points outside the bar
    /// footprint interior, bar faces above the plane and the bar top.
    pub fn ground_truth(&self) -> (Vec<Vec3>, Vec<bool>) {
        let d = self.delta;
        let [bx, by] = self.bar_min_cells;
        let [sx, sy, sz] = self.bar_size_cells;
        let mut pts = Vec::new();
        let mut on_bar = Vec::new();
        let n = self.plane_half_cells;
        for j in -n..=n {
            for i in -n..=n {
                let inside = i > bx && i < bx + sx && j > by && j < by + sy;
                if !inside {
                    pts.push(Vec3::new(i as f64 * d, j as f64 * d, 0.0));
                    on_bar.push(false);
                }
            }
        }
        let mut bar = |i: i64, j: i64, k: i64| {
            pts.push(Vec3::new(i as f64 * d, j as f64 * d, k as f64 * d));
            on_bar.push(true);
        };
        for k in 1..=sz {
            for j in by..=by + sy {
                bar(bx, j, k);
                bar(bx + sx, j, k);
            }
            for i in bx + 1..bx + sx {
                bar(i, by, k);
                bar(i, by + sy, k);
            }
        }
        for j in by + 1..by + sy {
            for i in bx + 1..bx + sx {
                bar(i, j, sz);
            }
        }
        (pts, on_bar)
    }

    pub fn camera_target(&self) -> Vec3 {
        let (lo, hi) = self.bar_box();
        Vec3::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), 0.3 * hi.z)
    }

    pub fn camera_poses(&self) -> Vec<Pose> {
        let target = self.camera_target();
        let mut out = Vec::new();
        for (r, el) in self.elevations_deg.iter().enumerate() {
            let el = el.to_radians();
            for k in 0..self.views_per_ring {
                let az = std::f64::consts::TAU * (k as f64 + 0.5 * r as f64) / self.views_per_ring as f64;
                let dir = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                out.push(Pose::look_at(target + dir * self.camera_distance, target, Vec3::z()));
            }
        }
        out
    }
}

fn shade(kind: Surface, p: &Vec3, n: &Vec3, spec: &ToySpec) -> Vec3 {
    let light = Vec3::from(PLANE_LIGHT).normalize();
    let lambert = 0.4 + 0.6 * n.dot(&light).max(0.0);
    let base = match kind {
        Surface::Plane => {
            let c = spec.checker_cells as f64 * spec.delta;
            let parity = ((p.x / c).floor() as i64 + (p.y / c).floor() as i64).rem_euclid(2);
            if parity == 0 {
                Vec3::new(0.85, 0.8, 0.7)
            } else {
                Vec3::new(0.2, 0.3, 0.4)
            }
        }
        Surface::Bar => Vec3::new(0.85, 0.2, 0.1),
    };
    base * lambert
}

fn face_normal(t: &Triangle) -> Vec3 {
    let [a, b, c] = t.vertices;
    (b - a).cross(&(c - a)).normalize()
}

/// Ray-cast color image and camera-space normal map of `mesh`.
fn cast_view(
    id: String,
    pose: Pose,
    spec: &ToySpec,
    bvh: &Bvh,
    mesh: &SceneTriangleSet,
    kinds: &[Surface],
) -> CameraView {
    let res = spec.resolution;
    let k = Intrinsics::from_fov(res, res, spec.fov_deg.to_radians());
    let eye = pose.camera_center();
    let ss = spec.supersample.max(1);
    let trace = |px: f64, py: f64| {
        let dir = pose.to_world_dir(&k.ray(px, py)).normalize();
        bvh.intersect(&eye, &dir).map(|h| {
            let t = &mesh.triangles[h.triangle];
            let mut n = face_normal(t);
            if n.dot(&dir) > 0.0 {
                n = -n;
            }
            let p = eye + dir * h.t;
            (shade(kinds[h.triangle], &p, &n, spec), n)
        })
    };
    let image = Grid::from_fn(res, res, |x, y| {
        let mut c = Vec3::zeros();
        for sy in 0..ss {
            for sx in 0..ss {
                let px = x as f64 + (sx as f64 + 0.5) / ss as f64;
                let py = y as f64 + (sy as f64 + 0.5) / ss as f64;
                if let Some((col, _)) = trace(px, py) {
                    c += col;
                }
            }
        }
        c / (ss * ss) as f64
    });
    let normals = Grid::from_fn(res, res, |x, y| {
        trace(x as f64 + 0.5, y as f64 + 0.5).map_or(Vec3::zeros(), |(_, n)| pose.rotation * n)
    });
    let mut view = CameraView::new(id, k, pose, image);
    view.normal_map = Some(normals);
    view
}

pub fn build_toy(spec: &ToySpec) -> Result<ToyScene> {
    let (mesh, kinds) = spec.mesh();
    let (pts, _) = spec.ground_truth();
    let gt = PointCloud::from_positions(&pts, spec.delta);
    let (lo, hi) = spec.bar_box();
    let eps = 1e-3 * spec.delta;
    let region = Region::Box {
        min: Vec3::new(lo.x - eps, lo.y - eps, 0.5 * spec.delta),
        max: Vec3::new(hi.x + eps, hi.y + eps, hi.z + eps),
    };
    let deg = degrade_cloud(
        &gt,
        &[RemovalRule {
            region,
            fraction: spec.removal_fraction,
        }],
        spec.seed,
    )?;
    let bvh = Bvh::new(&mesh);
    let views = spec
        .camera_poses()
        .into_iter()
        .enumerate()
        .map(|(i, pose)| cast_view(format!("view_{i:02}"), pose, spec, &bvh, &mesh, &kinds))
        .collect();
    Ok(ToyScene {
        spec: spec.clone(),
        mesh,
        gt,
        lidar: deg.kept,
        removed: deg.removed,
        views,
    })
}

/// OBJ/MTL text of the toy mesh.
pub fn mesh_obj(mesh: &SceneTriangleSet) -> (String, String) {
    use std::fmt::Write as _;
    let mut obj = String::from("mtllib toy.mtl\n");
    let mut current = f64::NAN;
    for (i, t) in mesh.triangles.iter().enumerate() {
        if t.albedo != current {
            current = t.albedo;
            let _ = writeln!(obj, "usemtl albedo_{}", (t.albedo * 100.0).round() as i64);
        }
        for v in &t.vertices {
            let _ = writeln!(obj, "v {} {} {}", v.x, v.y, v.z);
        }
        let b = 3 * i + 1;
        let _ = writeln!(obj, "f {} {} {}", b, b + 1, b + 2);
    }
    let mut albedos: Vec<i64> = mesh.triangles.iter().map(|t| (t.albedo * 100.0).round() as i64).collect();
    albedos.sort_unstable();
    albedos.dedup();
    let mut mtl = String::new();
    for a in albedos {
        let _ = writeln!(mtl, "newmtl albedo_{a}\nalbedo {}", a as f64 / 100.0);
    }
    (obj, mtl)
}
