//! Fixtures for the completion filter: a holed lattice scan and surfels
//! planted so that every filter rule removes something.

use rand::Rng;

use surffill::geometry::frame_from_normal;
use surffill::types::{PipelineConfig, PointCloud, Surfel, SurfelModel, Vec3};

pub const DELTA: f64 = 0.01;

/// A 40 x 40 lattice with a square hole in the middle.
pub fn holed_scan() -> PointCloud {
    let pts: Vec<Vec3> = (0..40)
        .flat_map(|i| (0..40).map(move |j| Vec3::new(i as f64 * DELTA, j as f64 * DELTA, 0.0)))
        .filter(|p| !(p.x > 0.14 && p.x < 0.26 && p.y > 0.14 && p.y < 0.26))
        .collect();
    PointCloud::from_positions(&pts, DELTA)
}

pub fn planted_model(n: usize, seed: u64) -> SurfelModel {
    let mut r = super::rng(seed);
    let surfels = (0..n)
        .map(|_| {
            let center = match r.random_range(0..6) {
                4 => Vec3::new(0.2, 0.2, 0.2) + Vec3::new(r.random(), r.random(), r.random()) * 0.01,
                5 => Vec3::new(r.random_range(0..40) as f64 * DELTA, r.random_range(0..14) as f64 * DELTA, 0.0),
                0 => Vec3::new(r.random_range(0.14..0.26), r.random_range(0.14..0.26), r.random_range(-0.01..0.01)),
                1 => Vec3::new(r.random_range(0.0..0.4), r.random_range(0.0..0.4), r.random_range(-0.005..0.005)),
                2 => Vec3::new(r.random_range(-0.2..0.6), r.random_range(-0.2..0.6), r.random_range(-0.3..0.3)),
                _ => Vec3::new(r.random_range(0.15..0.25), r.random_range(0.15..0.25), r.random_range(0.0..0.1)),
            };
            let (tu, tv) = frame_from_normal(&super::unit_vector(&mut r));
            let mut s = Surfel::new(center, tu, tv, r.random_range(0.001..0.12), r.random_range(0.001..0.12));
            s.opacity = r.random_range(0.0..0.02);
            if r.random_bool(0.5) {
                s.opacity = r.random_range(0.0..1.0);
            }
            s.was_densified = r.random_bool(0.7);
            s
        })
        .collect();
    SurfelModel::new(surfels)
}

pub fn planted_config() -> PipelineConfig {
    PipelineConfig {
        tau: 1.3,
        t_min: 0.045,
        t_max: 0.3,
        ..PipelineConfig::default()
    }
}

