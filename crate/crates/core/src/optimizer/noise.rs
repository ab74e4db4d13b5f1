//! Exploratory jitter of surfel centers within their tangent planes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::sigmoid;
use crate::types::{Mat3, PipelineConfig, Surfel, SurfelModel, Vec3};

/// Opacity-dependent gain `sigmoid(-k (1 - alpha - t))`.
pub fn noise_gain(alpha: f64, k: f64, t: f64) -> f64 {
    sigmoid(-k * (1.0 - alpha - t))
}

/// `L L^T` with `L = [s_u t_u, s_v t_v, 0]`.
pub fn noise_shape(s: &Surfel) -> Mat3 {
    let a = s.tangent_u * s.scale_u;
    let b = s.tangent_v * s.scale_v;
    a * a.transpose() + b * b.transpose()
}

/// Displacement of one surfel for a standard-normal draw `g`.
pub fn noise_vector(s: &Surfel, lr: f64, cfg: &PipelineConfig, g: &Vec3) -> Vec3 {
    noise_shape(s) * g * (lr * noise_gain(s.opacity, cfg.noise_k, cfg.noise_t))
}

/// Exponential decay from `start` to `end` over `total` iterations.
pub fn exp_schedule(start: f64, end: f64, iteration: usize, total: usize) -> f64 {
    if total <= 1 || start <= 0.0 || end <= 0.0 {
        return if iteration == 0 { start } else { end.min(start) };
    }
    let t = (iteration as f64 / (total - 1) as f64).clamp(0.0, 1.0);
    (start.ln() * (1.0 - t) + end.ln() * t).exp()
}

pub fn positional_noise(model: &SurfelModel, lr: f64, cfg: &PipelineConfig, seed: u64) -> SurfelModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = model.clone();
    for s in &mut out.surfels {
        let g = Vec3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        s.center += noise_vector(s, lr, cfg, &g);
    }
    out
}
