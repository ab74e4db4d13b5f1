//! Post-training surfel filtering, point sampling and merging with the scan.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ambiguity::ambiguity_scores;
use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::parallel::map_indices;
use crate::types::{PipelineConfig, PointCloud, PointSource, ScanPoint, Surfel, SurfelModel, Vec3};

/// In-plane samples are redrawn outside this many standard deviations.
pub const TRUNCATION_SIGMA: f64 = 3.0;

pub const FILTER_STAGES: [&str; 5] = ["scale", "opacity", "densified", "ambiguity", "lidar_distance"];

/// Surfel counts through the filter.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    /// Removals per stage, in [`FILTER_STAGES`] order.
    pub removed: [usize; 5],
    pub output: usize,
}

impl FilterReport {
    pub fn to_json(&self) -> serde_json::Value {
        let stages: serde_json::Map<String, serde_json::Value> = FILTER_STAGES
            .iter()
            .zip(self.removed)
            .map(|(k, v)| (k.to_string(), v.into()))
            .collect();
        serde_json::json!({ "input": self.input, "removed": stages, "output": self.output })
    }
}

/// Sum of distances to the `k` nearest scan points.
pub fn lidar_distance_sum(index: &KnnIndex, p: &Vec3, k: usize) -> f64 {
    index.knn(p, k, None).iter().map(|n| n.distance).sum()
}

/// Applies the five filter stages in order: oversized scale, low opacity,
/// not densified, remaining high ambiguity, scan-distance window.
///
/// Stage four rescores the stage-three survivors against the union of their
/// centers and `lidar`.
pub fn filter_surfels(model: &SurfelModel, lidar: &PointCloud, cfg: &PipelineConfig) -> Result<(SurfelModel, FilterReport)> {
    let k = cfg.knn_k_filter;
    if k == 0 || lidar.len() < k {
        return Err(Error::Parameter(format!(
            "distance filter needs k = {k} scan points, cloud has {}",
            lidar.len()
        )));
    }
    let mut report = FilterReport {
        input: model.len(),
        ..FilterReport::default()
    };
    let mut current: Vec<Surfel> = model.surfels.clone();
    let mut stage = |idx: usize, current: &mut Vec<Surfel>, keep: &dyn Fn(usize, &Surfel) -> bool| {
        let before = current.len();
        let mut i = 0;
        current.retain(|s| {
            let k = keep(i, s);
            i += 1;
            k
        });
        report.removed[idx] = before - current.len();
    };

    let max_scale = cfg.scale_filter_multiplier * lidar.delta;
    stage(0, &mut current, &|_, s| s.max_scale() <= max_scale);
    stage(1, &mut current, &|_, s| s.opacity >= cfg.prune_opacity_base);
    stage(2, &mut current, &|_, s| s.was_densified);

    if !current.is_empty() {
        let mut pts: Vec<Vec3> = current.iter().map(|s| s.center).collect();
        pts.extend(lidar.points.iter().map(|p| p.position));
        let scores = ambiguity_scores(&pts, cfg.knn_k_ambiguity, lidar.delta, cfg.density_scale_f)?;
        for (s, p) in current.iter_mut().zip(scores) {
            s.ambiguity = p;
        }
    }
    stage(3, &mut current, &|_, s| !(s.ambiguity > cfg.tau));

    let index = KnnIndex::new(&lidar.positions())?;
    let sums = map_indices(current.len(), |i| lidar_distance_sum(&index, &current[i].center, k));
    stage(4, &mut current, &|i, _| sums[i] > cfg.t_min && sums[i] < cfg.t_max);

    report.output = current.len();
    if current.is_empty() {
        warn!("filter removed every surfel; nothing to complete");
    }
    Ok((SurfelModel::new(current), report))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingParams {
    /// Center plus in-plane samples per surfel; 0 matches the scan density.
    pub points_per_surfel: usize,
    /// Expected bridge samples per surfel, as a fraction of its point count.
    pub bridge_fraction: f64,
    /// Neighbour count for choosing bridge partners.
    pub k: usize,
    /// Scan spacing, used by the density-matched default.
    pub delta: f64,
}

impl SamplingParams {
    pub fn from_config(cfg: &PipelineConfig, delta: f64) -> Self {
        Self {
            points_per_surfel: cfg.points_per_surfel,
            bridge_fraction: cfg.bridge_fraction,
            k: cfg.knn_k_filter,
            delta,
        }
    }

    /// Point count of one surfel: `points_per_surfel`, or the 1-sigma
    /// footprint area over `delta^2` when that is 0.
    pub fn count_for(&self, s: &Surfel) -> usize {
        if self.points_per_surfel > 0 {
            return self.points_per_surfel;
        }
        let area = std::f64::consts::PI * s.scale_u * s.scale_v;
        ((area / (self.delta * self.delta)).round() as usize).max(1)
    }
}

/// Standard normal draw redrawn until it lies within [`TRUNCATION_SIGMA`].
pub fn truncated_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let x: f64 = StandardNormal.sample(rng);
        if x.abs() <= TRUNCATION_SIGMA {
            return x;
        }
    }
}

/// `(1 - a) p + a q`.
pub fn bridge_point(p: &Vec3, q: &Vec3, a: f64) -> Vec3 {
    p * (1.0 - a) + q * a
}

fn surfel_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Samples completion points from `model`: each surfel's center, truncated
/// Gaussian samples in its plane and bridge samples towards random near
/// neighbours.
pub fn sample_points(model: &SurfelModel, params: &SamplingParams, seed: u64) -> Result<PointCloud> {
    if model.is_empty() {
        return Err(Error::Input("cannot sample an empty surfel model".into()));
    }
    if !(params.delta > 0.0) {
        return Err(Error::Parameter(format!("delta must be positive, got {}", params.delta)));
    }
    let centers = model.centers();
    let bridges = model.len() > 1 && params.bridge_fraction > 0.0 && params.k > 0;
    if model.len() == 1 && params.bridge_fraction > 0.0 {
        warn!("single-surfel model: bridge sampling skipped");
    }
    let index = if bridges { Some(KnnIndex::new(&centers)?) } else { None };

    let per_surfel = map_indices(model.len(), |i| {
        let s = &model.surfels[i];
        let mut rng = ChaCha8Rng::seed_from_u64(surfel_seed(seed, i));
        let n = params.count_for(s);
        let mut out = Vec::with_capacity(n + 1);
        out.push(s.center);
        for _ in 1..n {
            let u = truncated_normal(&mut rng);
            let v = truncated_normal(&mut rng);
            out.push(s.center + s.tangent_u * (u * s.scale_u) + s.tangent_v * (v * s.scale_v));
        }
        if let Some(index) = &index {
            let expected = params.bridge_fraction * n as f64;
            let mut m = expected.floor() as usize;
            if rng.random::<f64>() < expected - m as f64 {
                m += 1;
            }
            let neigh = index.knn(&s.center, params.k, Some(i));
            for _ in 0..m {
                let q = &centers[neigh[rng.random_range(0..neigh.len())].index];
                let a: f64 = rng.random();
                out.push(bridge_point(&s.center, q, a));
            }
        }
        out
    });
    let points = per_surfel.into_iter().flatten().map(ScanPoint::completed).collect();
    Ok(PointCloud::new(points, params.delta))
}

/// Concatenates the scan and the completion, keeping source tags; spacing
/// comes from `lidar`.
pub fn merge(lidar: &PointCloud, completed: &PointCloud) -> PointCloud {
    let mut points = lidar.points.clone();
    points.extend(completed.points.iter().cloned());
    PointCloud::new(points, lidar.delta)
}

/// Points of `cloud` carrying `source`.
pub fn split_by_source(cloud: &PointCloud, source: PointSource) -> PointCloud {
    cloud.filtered(|_, p| p.source == source)
}
