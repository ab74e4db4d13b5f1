//! Small geometric helpers shared across modules.

use nalgebra::SymmetricEigen;

use crate::types::{Mat3, Vec3};

/// Rodrigues rotation of `v` by the axis-angle vector `omega`.
pub fn rotate(v: &Vec3, omega: &Vec3) -> Vec3 {
    let theta = omega.norm();
    if theta < 1e-300 {
        return *v;
    }
    let k = omega / theta;
    let (s, c) = theta.sin_cos();
    v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c))
}

/// Orthonormal tangent pair `(u, v)` with `u x v = normal`.
///
/// The in-plane orientation is deterministic: `u` is the projection of the
/// world axis least aligned with the normal.
pub fn frame_from_normal(normal: &Vec3) -> (Vec3, Vec3) {
    let n = normal.normalize();
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    let seed = axes
        .iter()
        .copied()
        .min_by(|a, b| a.dot(&n).abs().total_cmp(&b.dot(&n).abs()))
        .unwrap_or(Vec3::x());
    let u = (seed - n * seed.dot(&n)).normalize();
    let v = n.cross(&u);
    (u, v)
}

/// Eigen-decomposition of the neighbourhood covariance.
/// Returns (normal, eigenvalues ascending) or `None` for fewer than 3 points.
pub fn pca_normal(points: &[Vec3]) -> Option<(Vec3, [f64; 3])> {
    if points.len() < 3 {
        return None;
    }
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let normal = eig.eigenvectors.column(idx[0]).into_owned();
    Some((normal, [eig.eigenvalues[idx[0]], eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]]))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}
