//! Per-view uncertainty maps, completion masks and training-view sampling
//! weights.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::parallel::map_indices;
use crate::types::{CameraView, Grid, SurfelModel, Vec3};

/// Weight given to views that see no high-ambiguity surfel.
pub const SAMPLING_FLOOR: f64 = 1e-3;

/// Normal used for pixels without a valid normal.
fn facing_camera() -> Vec3 {
    Vec3::new(0.0, 0.0, -1.0)
}

fn unit_or_facing(n: &Vec3) -> Vec3 {
    let len = n.norm();
    if len > 1e-12 && len.is_finite() {
        n / len
    } else {
        facing_camera()
    }
}

/// Angle between two unit vectors, accurate near 0 and pi.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Maximum angle to the 4-neighbours, normalised by pi/2 and clamped to [0, 1].
pub fn normal_proxy_uncertainty(normals: &Grid<Vec3>) -> Grid<f64> {
    let (w, h) = (normals.width, normals.height);
    let unit = normals.map(unit_or_facing);
    Grid::from_fn(w, h, |x, y| {
        let c = unit.get(x, y);
        let mut worst: f64 = 0.0;
        let mut visit = |nx: usize, ny: usize| worst = worst.max(angle_between(c, unit.get(nx, ny)));
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
        (worst / FRAC_PI_2).min(1.0)
    })
}

/// Fills `view.uncertainty` from the angular-error map, or from the normal
/// map when no angular-error map is present.
pub fn compute_uncertainty(view: &CameraView) -> Result<CameraView> {
    let u = if let Some(ae) = &view.angular_error_map {
        ae.map(|e| if e.is_nan() { 1.0 } else { (e / FRAC_PI_2).clamp(0.0, 1.0) })
    } else if let Some(n) = &view.normal_map {
        normal_proxy_uncertainty(n)
    } else {
        return Err(Error::Input(format!("view {} has neither normal nor angular-error map", view.id)));
    };
    if !u.same_shape(&view.image) {
        return Err(Error::Validation(vec![format!(
            "view {}: uncertainty source is {}x{}, image is {}x{}",
            view.id, u.width, u.height, view.image.width, view.image.height
        )]));
    }
    let mut out = view.clone();
    out.uncertainty = u;
    Ok(out)
}

/// `mask = uncertainty > threshold`.
pub fn threshold_mask(view: &CameraView, threshold: f64) -> CameraView {
    let mut out = view.clone();
    out.mask = view.uncertainty.map(|&u| u8::from(u > threshold));
    out
}

/// Number of high-ambiguity surfel centers and of all centers that project
/// into the view with positive depth.
pub fn projection_counts(view: &CameraView, model: &SurfelModel, tau: f64) -> (usize, usize) {
    let mut high = 0;
    let mut all = 0;
    for s in &model.surfels {
        if view.project_inside(&s.center).is_some() {
            all += 1;
            if s.ambiguity > tau {
                high += 1;
            }
        }
    }
    (high, all)
}

/// Sets each view's weight to the share of high-ambiguity surfels among the
/// surfels it sees (0 for views that see none).
pub fn view_sampling_weights(views: &[CameraView], model: &SurfelModel, tau: f64) -> Vec<CameraView> {
    map_indices(views.len(), |i| {
        let (high, all) = projection_counts(&views[i], model, tau);
        let mut v = views[i].clone();
        v.sampling_weight = if all == 0 { 0.0 } else { high as f64 / all as f64 };
        v
    })
}

/// Normalised sampling distribution over views. Views with zero weight get
/// [`SAMPLING_FLOOR`] first.
pub fn sampling_distribution(views: &[CameraView]) -> Vec<f64> {
    let w: Vec<f64> = views
        .iter()
        .map(|v| if v.sampling_weight > 0.0 { v.sampling_weight } else { SAMPLING_FLOOR })
        .collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|x| x / sum).collect()
}
