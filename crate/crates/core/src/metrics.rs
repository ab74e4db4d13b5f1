//! Chamfer distance, precision/recall/F1 at a distance threshold and radius
//! recall of withheld points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::parallel::map_indices;
use crate::types::{PointCloud, PointSource, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean of the two directed mean nearest-neighbour distances, meters.
    pub chamfer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    #[serde(default)]
    pub radius_recall: Vec<(f64, f64)>,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    let d = precision + recall;
    if d > 0.0 {
        2.0 * precision * recall / d
    } else {
        0.0
    }
}

/// Distance from every query point to its nearest indexed point.
pub fn nearest_distances(queries: &[Vec3], index: &KnnIndex) -> Vec<f64> {
    map_indices(queries.len(), |i| index.nearest(&queries[i]).map_or(f64::INFINITY, |n| n.distance))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fraction_within(d: &[f64], threshold: f64) -> f64 {
    d.iter().filter(|&&x| x <= threshold).count() as f64 / d.len() as f64
}

pub fn evaluate(candidate: &PointCloud, reference: &PointCloud, threshold: f64) -> Result<MetricsReport> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::Input(format!(
            "metrics need non-empty clouds (candidate {}, reference {})",
            candidate.len(),
            reference.len()
        )));
    }
    let c = candidate.positions();
    let r = reference.positions();
    let to_ref = nearest_distances(&c, &KnnIndex::new(&r)?);
    let to_cand = nearest_distances(&r, &KnnIndex::new(&c)?);
    let precision = fraction_within(&to_ref, threshold);
    let recall = fraction_within(&to_cand, threshold);
    Ok(MetricsReport {
        chamfer: 0.5 * (mean(&to_ref) + mean(&to_cand)),
        precision,
        recall,
        f1: f1_score(precision, recall),
        threshold,
        radius_recall: Vec::new(),
    })
}

/// For each radius, the fraction of `removed_gt` points with at least one
/// completed-source point of `completed` within that radius.
pub fn radius_recall(completed: &PointCloud, removed_gt: &PointCloud, radii: &[f64]) -> Result<Vec<(f64, f64)>> {
    let pts: Vec<Vec3> = completed
        .points
        .iter()
        .filter(|p| p.source == PointSource::Completed)
        .map(|p| p.position)
        .collect();
    if removed_gt.is_empty() || pts.is_empty() {
        return Ok(radii.iter().map(|&r| (r, 0.0)).collect());
    }
    let d = nearest_distances(&removed_gt.positions(), &KnnIndex::new(&pts)?);
    Ok(radii.iter().map(|&r| (r, fraction_within(&d, r))).collect())
}
