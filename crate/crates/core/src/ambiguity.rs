//! Inverse-density ambiguity score, structural downsampling and surfel
//! initialisation from the scan.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{frame_from_normal, pca_normal};
use crate::knn::KnnIndex;
use crate::parallel::map_indices;
use crate::types::{Aabb, CameraView, PipelineConfig, PointCloud, Surfel, SurfelModel, Vec3};

/// Mean distance to the `k` nearest other points, divided by `delta`.
///
/// Positions are centred and multiplied by `f` before the neighbour search;
/// the factor is divided out again, so the result does not depend on it.
pub fn ambiguity_scores(positions: &[Vec3], k: usize, delta: f64, f: f64) -> Result<Vec<f64>> {
    if k == 0 || k >= positions.len() {
        return Err(Error::Parameter(format!(
            "k = {k} needs at least k + 1 points, cloud has {}",
            positions.len()
        )));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
    }
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::Parameter(format!("density scale f must be positive, got {f}")));
    }
    let center = Aabb::from_points(positions).center();
    let scaled: Vec<Vec3> = positions.iter().map(|p| (p - center) * f).collect();
    let index = KnnIndex::new(&scaled)?;
    let norm = k as f64 * delta * f;
    Ok(map_indices(scaled.len(), |i| {
        let sum: f64 = index.knn(&scaled[i], k, Some(i)).iter().map(|n| n.distance).sum();
        sum / norm
    }))
}

/// Scores every point and sets `high_ambiguity = ambiguity > tau`.
pub fn compute_ambiguity(cloud: &PointCloud, k: usize, f: f64, tau: f64) -> Result<PointCloud> {
    let scores = ambiguity_scores(&cloud.positions(), k, cloud.delta, f)?;
    let mut out = cloud.clone();
    for (p, s) in out.points.iter_mut().zip(scores) {
        p.ambiguity = s;
        p.high_ambiguity = s > tau;
    }
    Ok(out)
}

/// Keeps every point with `ambiguity > tau`; keeps each remaining point
/// independently with probability `keep_fraction_low`.
pub fn structural_downsample(cloud: &PointCloud, tau: f64, keep_fraction_low: f64, seed: u64) -> Result<PointCloud> {
    if !(keep_fraction_low > 0.0 && keep_fraction_low <= 1.0) {
        return Err(Error::Parameter(format!(
            "keep_fraction_low must lie in (0, 1], got {keep_fraction_low}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(cloud.filtered(|_, p| {
        let draw: f64 = rng.random();
        p.ambiguity > tau || draw < keep_fraction_low
    }))
}

/// Initial surfel scale for a point of ambiguity `p`.
pub fn initial_scale(p: f64, delta: f64, in_delta_units: bool) -> f64 {
    let s = p.max(0.0).sqrt() * std::f64::consts::FRAC_1_SQRT_2;
    let unit = if in_delta_units { delta } else { 1.0 };
    // A point with duplicate neighbours has p = 0; keep a valid scale.
    (s * unit).max(1e-3 * unit)
}

/// Normal of the local PCA plane, or `+z` when the neighbourhood is degenerate.
/// The sign is chosen with a non-negative z component (ties: x, then y).
fn local_normal(index: &KnnIndex, positions: &[Vec3], i: usize, knn: usize) -> Vec3 {
    let neigh: Vec<Vec3> = index
        .knn(&positions[i], knn.max(3), None)
        .iter()
        .map(|n| positions[n.index])
        .collect();
    let n = match pca_normal(&neigh) {
        Some((n, ev)) if ev[1] > 1e-9 * ev[2].max(f64::MIN_POSITIVE) => n,
        _ => return Vec3::z(),
    };
    let key = if n.z.abs() > 1e-12 {
        n.z
    } else if n.x.abs() > 1e-12 {
        n.x
    } else {
        n.y
    };
    if key < 0.0 {
        -n
    } else {
        n
    }
}

/// Color of `p` in the nearest view that sees it (no occlusion test).
pub fn nearest_view_color(p: &Vec3, views: &[CameraView]) -> Option<Vec3> {
    views
        .iter()
        .filter_map(|v| v.project_inside(p).map(|(u, w, z)| (z, v, u, w)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, v, u, w)| *v.image.get(u as usize, w as usize))
}

/// One surfel per scan point, sized by the point's ambiguity.
pub fn init_surfels(cloud: &PointCloud, cfg: &PipelineConfig, views: &[CameraView]) -> Result<SurfelModel> {
    let positions = cloud.positions();
    let index = KnnIndex::new(&positions)?;
    let surfels = map_indices(cloud.len(), |i| {
        let pt = &cloud.points[i];
        let normal = local_normal(&index, &positions, i, cfg.normal_knn);
        let (tu, tv) = frame_from_normal(&normal);
        let s = initial_scale(pt.ambiguity, cloud.delta, cfg.scale_in_delta_units);
        let mut surfel = Surfel::new(pt.position, tu, tv, s, s);
        surfel.opacity = cfg.initial_opacity;
        surfel.ambiguity = pt.ambiguity;
        surfel.color = nearest_view_color(&pt.position, views).unwrap_or(Vec3::repeat(0.5));
        surfel
    });
    Ok(SurfelModel::new(surfels))
}
