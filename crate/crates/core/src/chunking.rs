//! Divide-and-conquer partitioning of large scenes into square ground-plane
//! cells, with point extension and post-training trimming.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::types::{Aabb, CameraView, PointCloud, SurfelModel, Vec3};

/// Regular grid over two ground-plane axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkGrid {
    /// World axes spanning the ground plane, `[0, 1]` for z-up scenes.
    pub axes: [usize; 2],
    pub origin: [f64; 2],
    pub cell: f64,
    pub counts: [usize; 2],
}

impl ChunkGrid {
    pub fn covering(bbox: &Aabb, cell: f64, axes: [usize; 2]) -> Self {
        let mut counts = [1; 2];
        let mut origin = [0.0; 2];
        for (k, &a) in axes.iter().enumerate() {
            origin[k] = bbox.min[a];
            let extent = bbox.max[a] - bbox.min[a];
            counts[k] = ((extent / cell).ceil() as usize).max(1);
        }
        Self {
            axes,
            origin,
            cell,
            counts,
        }
    }

    /// Cell index along ground axis `k`. Intervals are half-open except that
    /// the last cell also holds its upper boundary; `None` outside the grid.
    pub fn index_along(&self, k: usize, x: f64) -> Option<usize> {
        let t = (x - self.origin[k]) / self.cell;
        if !(t >= 0.0) {
            return None;
        }
        let i = t.floor() as usize;
        let n = self.counts[k];
        if i < n {
            Some(i)
        } else if i == n && x <= self.origin[k] + n as f64 * self.cell {
            Some(n - 1)
        } else {
            None
        }
    }

    pub fn cell_of(&self, p: &Vec3) -> Option<[usize; 2]> {
        Some([self.index_along(0, p[self.axes[0]])?, self.index_along(1, p[self.axes[1]])?])
    }

    fn vertical_axis(&self) -> usize {
        3 - self.axes[0] - self.axes[1]
    }

    /// Box of cell `ix` with the vertical range `vertical`.
    pub fn cell_box(&self, ix: [usize; 2], vertical: (f64, f64)) -> Aabb {
        let mut min = Vec3::zeros();
        let mut max = Vec3::zeros();
        for k in 0..2 {
            let a = self.axes[k];
            min[a] = self.origin[k] + ix[k] as f64 * self.cell;
            max[a] = self.origin[k] + (ix[k] + 1) as f64 * self.cell;
        }
        let v = self.vertical_axis();
        min[v] = vertical.0;
        max[v] = vertical.1;
        Aabb { min, max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub grid: ChunkGrid,
    pub cell: [usize; 2],
    /// Cell box; its vertical range covers the scene.
    pub bbox: Aabb,
    pub extended_bbox: Aabb,
    pub camera_ids: Vec<String>,
    /// Sorted indices into the master cloud.
    pub point_indices: Vec<usize>,
}

impl Chunk {
    /// Membership in the unextended cell, judged on the ground axes only.
    pub fn owns(&self, p: &Vec3) -> bool {
        self.grid.cell_of(p) == Some(self.cell)
    }
}

/// Half-open ground-plane membership `[min, max)`.
fn in_ground_box(b: &Aabb, axes: [usize; 2], p: &Vec3) -> bool {
    axes.iter().all(|&a| p[a] >= b.min[a] && p[a] < b.max[a])
}

/// Convex polyhedron described for a separating-axis test.
#[derive(Clone, Debug)]
pub struct ConvexHull {
    pub vertices: Vec<Vec3>,
    pub face_normals: Vec<Vec3>,
    pub edge_directions: Vec<Vec3>,
}

impl ConvexHull {
    pub fn from_aabb(b: &Aabb) -> Self {
        Self {
            vertices: b.corners().to_vec(),
            face_normals: vec![Vec3::x(), Vec3::y(), Vec3::z()],
            edge_directions: vec![Vec3::x(), Vec3::y(), Vec3::z()],
        }
    }

    /// Viewing pyramid of `view` from the camera center to camera depth `far`.
    pub fn frustum(view: &CameraView, far: f64) -> Self {
        let k = &view.intrinsics;
        let (w, h) = (k.width as f64, k.height as f64);
        let apex = view.pose.camera_center();
        let rays: Vec<Vec3> = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
            .iter()
            .map(|&(x, y)| view.pose.to_world_dir(&k.ray(x, y)))
            .collect();
        let mut vertices = vec![apex];
        vertices.extend(rays.iter().map(|r| apex + r * far));
        let mut face_normals: Vec<Vec3> = (0..4).map(|i| rays[i].cross(&rays[(i + 1) % 4])).collect();
        face_normals.push(view.pose.to_world_dir(&Vec3::z()));
        let mut edge_directions = rays.clone();
        edge_directions.push(view.pose.to_world_dir(&Vec3::x()));
        edge_directions.push(view.pose.to_world_dir(&Vec3::y()));
        Self {
            vertices,
            face_normals,
            edge_directions,
        }
    }

    fn interval(&self, axis: &Vec3) -> (f64, f64) {
        self.vertices
            .iter()
            .map(|v| v.dot(axis))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)))
    }
}

/// Exact intersection test of two convex polyhedra (touching counts).
pub fn hulls_intersect(a: &ConvexHull, b: &ConvexHull) -> bool {
    let mut axes: Vec<Vec3> = a.face_normals.iter().chain(&b.face_normals).copied().collect();
    for ea in &a.edge_directions {
        for eb in &b.edge_directions {
            axes.push(ea.cross(eb));
        }
    }
    axes.iter().filter(|ax| ax.norm_squared() > 1e-24).all(|ax| {
        let (a0, a1) = a.interval(ax);
        let (b0, b1) = b.interval(ax);
        a0 <= b1 && b0 <= a1
    })
}

/// Whether `p` lies in the view's pyramid up to camera depth `far`.
pub fn in_frustum(view: &CameraView, far: f64, p: &Vec3) -> bool {
    view.project_inside(p).is_some_and(|(_, _, z)| z <= far)
}

/// Grid of square cells over the ground plane (x/y) of `cloud`.
pub fn make_chunks(
    cloud: &PointCloud,
    views: &[CameraView],
    cell_size: f64,
    visibility_distance: f64,
    extension: f64,
) -> Result<Vec<Chunk>> {
    make_chunks_on_axes(cloud, views, cell_size, visibility_distance, extension, [0, 1])
}

pub fn make_chunks_on_axes(
    cloud: &PointCloud,
    views: &[CameraView],
    cell_size: f64,
    visibility_distance: f64,
    extension: f64,
    axes: [usize; 2],
) -> Result<Vec<Chunk>> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::Parameter(format!("cell size must be positive, got {cell_size}")));
    }
    if !(extension >= 0.0) || !(visibility_distance >= 0.0) {
        return Err(Error::Parameter("extension and visibility distance must be non-negative".into()));
    }
    if axes[0] == axes[1] || axes.iter().any(|&a| a > 2) {
        return Err(Error::Parameter(format!("invalid ground axes {axes:?}")));
    }
    if cloud.is_empty() {
        return Err(Error::Input("cannot chunk an empty cloud".into()));
    }
    let grid = ChunkGrid::covering(&cloud.bbox, cell_size, axes);
    let v = grid.vertical_axis();
    let vertical = (cloud.bbox.min[v], cloud.bbox.max[v]);
    let frusta: Vec<ConvexHull> = views.iter().map(|w| ConvexHull::frustum(w, visibility_distance)).collect();
    let cells: Vec<Option<[usize; 2]>> = cloud.points.iter().map(|p| grid.cell_of(&p.position)).collect();
    let grow = extension * cell_size * 0.5;

    let mut chunks = Vec::new();
    for iy in 0..grid.counts[1] {
        for ix in 0..grid.counts[0] {
            let cell = [ix, iy];
            let bbox = grid.cell_box(cell, vertical);
            let mut extended_bbox = bbox;
            for &a in &axes {
                extended_bbox.min[a] -= grow;
                extended_bbox.max[a] += grow;
            }
            let hull = ConvexHull::from_aabb(&bbox);
            let selected: Vec<usize> = (0..views.len())
                .filter(|&i| {
                    grid.cell_of(&views[i].pose.camera_center()) == Some(cell) || hulls_intersect(&frusta[i], &hull)
                })
                .collect();
            let point_indices: Vec<usize> = cloud
                .points
                .iter()
                .enumerate()
                .filter(|(i, p)| {
                    cells[*i] == Some(cell)
                        || (grow > 0.0 && in_ground_box(&extended_bbox, axes, &p.position))
                        || selected.iter().any(|&c| in_frustum(&views[c], visibility_distance, &p.position))
                })
                .map(|(i, _)| i)
                .collect();
            if point_indices.is_empty() && selected.is_empty() {
                continue;
            }
            chunks.push(Chunk {
                id: format!("chunk_{ix}_{iy}"),
                grid,
                cell,
                bbox,
                extended_bbox,
                camera_ids: selected.iter().map(|&i| views[i].id.clone()).collect(),
                point_indices,
            });
        }
    }
    Ok(chunks)
}

/// The chunk's training cloud.
pub fn chunk_cloud(cloud: &PointCloud, chunk: &Chunk) -> PointCloud {
    PointCloud::new(chunk.point_indices.iter().map(|&i| cloud.points[i]).collect(), cloud.delta)
}

/// The chunk's training views, in input order.
pub fn chunk_views(views: &[CameraView], chunk: &Chunk) -> Vec<CameraView> {
    views.iter().filter(|v| chunk.camera_ids.contains(&v.id)).cloned().collect()
}

/// Drops surfels whose centers lie outside the chunk's unextended cell.
pub fn finalize_chunk(trained: &SurfelModel, chunk: &Chunk) -> SurfelModel {
    SurfelModel::new(trained.surfels.iter().filter(|s| chunk.owns(&s.center)).cloned().collect())
}

/// Concatenates finalized chunk models. Returns the merged model and the
/// number of surfels that coincide (within 1e-9) with one from another chunk.
pub fn merge_chunks(models: &[SurfelModel]) -> Result<(SurfelModel, usize)> {
    let mut surfels = Vec::new();
    let mut owner = Vec::new();
    for (c, m) in models.iter().enumerate() {
        surfels.extend(m.surfels.iter().cloned());
        owner.extend(std::iter::repeat_n(c, m.len()));
    }
    let merged = SurfelModel::new(surfels);
    let centers = merged.centers();
    let index = KnnIndex::new(&centers)?;
    let mut duplicates = 0;
    for (i, p) in centers.iter().enumerate() {
        let mut k = 2;
        loop {
            let near = index.knn(p, k, Some(i));
            let close: Vec<_> = near.iter().filter(|n| n.distance <= 1e-9).collect();
            if close.iter().any(|n| owner[n.index] != owner[i]) {
                duplicates += 1;
                break;
            }
            if close.len() < near.len() || near.len() < k {
                break;
            }
            k *= 2;
        }
    }
    if duplicates > 0 {
        warn!("{duplicates} surfels coincide across chunks");
    }
    Ok((merged, duplicates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Grid, Intrinsics, Pose};

    fn view(id: &str, eye: Vec3, target: Vec3) -> CameraView {
        CameraView::new(
            id,
            Intrinsics::from_fov(8, 8, 0.8),
            Pose::look_at(eye, target, Vec3::z()),
            Grid::filled(8, 8, Vec3::zeros()),
        )
    }

    fn lattice(n: usize, step: f64) -> PointCloud {
        let pts: Vec<Vec3> = (0..n * n)
            .map(|i| Vec3::new((i % n) as f64 * step, (i / n) as f64 * step, 0.0))
            .collect();
        PointCloud::from_positions(&pts, step)
    }

    #[test]
    fn single_cell_holds_everything() {
        let c = lattice(5, 0.1);
        let v = view("a", Vec3::new(0.2, 0.2, 1.0), Vec3::new(0.2, 0.2, 0.0));
        let chunks = make_chunks(&c, &[v], 10.0, 20.0, 0.2).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].point_indices, (0..25).collect::<Vec<_>>());
        assert_eq!(chunks[0].camera_ids, vec!["a".to_string()]);
    }

    #[test]
    fn exact_multiple_extent_keeps_boundary_points() {
        let c = lattice(5, 0.25);
        let chunks = make_chunks(&c, &[], 0.5, 1.0, 0.0).unwrap();
        assert_eq!(chunks.len(), 4);
        let total: usize = chunks.iter().map(|c| c.point_indices.len()).sum();
        assert_eq!(total, 25);
    }

    #[test]
    fn sat_matches_obvious_cases() {
        let b = Aabb {
            min: Vec3::new(-1.0, -1.0, -1.0),
            max: Vec3::new(1.0, 1.0, 1.0),
        };
        let hull = ConvexHull::from_aabb(&b);
        let looking = view("a", Vec3::new(0.0, -5.0, 0.0), Vec3::zeros());
        assert!(hulls_intersect(&ConvexHull::frustum(&looking, 10.0), &hull));
        assert!(!hulls_intersect(&ConvexHull::frustum(&looking, 3.0), &hull));
        let away = view("b", Vec3::new(0.0, -5.0, 0.0), Vec3::new(0.0, -10.0, 0.0));
        assert!(!hulls_intersect(&ConvexHull::frustum(&away, 100.0), &hull));
    }

    #[test]
    fn finalize_and_merge() {
        let c = lattice(4, 1.0);
        let chunks = make_chunks(&c, &[], 2.0, 4.0, 0.2).unwrap();
        let all = SurfelModel::new(
            c.positions()
                .iter()
                .map(|p| crate::types::Surfel::new(*p, Vec3::x(), Vec3::y(), 0.1, 0.1))
                .collect(),
        );
        let parts: Vec<SurfelModel> = chunks.iter().map(|ch| finalize_chunk(&all, ch)).collect();
        let (merged, dup) = merge_chunks(&parts).unwrap();
        assert_eq!(merged.len(), all.len());
        assert_eq!(dup, 0);
        let (_, dup) = merge_chunks(&[all.clone(), all]).unwrap();
        assert_eq!(dup, 32);
    }
}
