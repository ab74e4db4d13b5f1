//! Focused surfel optimisation: Adam over surfel parameters with tangential
//! exploration noise, density control and periodic ambiguity updates.

pub mod adc;
pub mod losses;
pub mod noise;

use log::{debug, info};
use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

pub use adc::{adc_step, AdcOutcome, AdcReport, Origin};
pub use losses::{compute_losses, objective_gradient, LossBreakdown};
pub use noise::{noise_gain, positional_noise};

use crate::ambiguity::ambiguity_scores;
use crate::error::{Error, Result};
use crate::geometry::{logit, rotate, sigmoid};
use crate::renderer::{render, RenderOptions, SurfelGrad};
use crate::types::{CameraView, PipelineConfig, PointCloud, SurfelModel, Vec3};
use crate::uncertainty::sampling_distribution;

/// Parameters per surfel: position (3), rotation increment (3), log scales (2),
/// logit opacity (1), color (3).
pub const PARAMS: usize = 12;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    m: [f64; PARAMS],
    v: [f64; PARAMS],
    steps: u32,
}

/// Flattens a surfel gradient to the optimiser's parameterisation.
pub fn flat_gradient(g: &SurfelGrad, opacity: f64) -> [f64; PARAMS] {
    let ga = g.opacity * opacity * (1.0 - opacity);
    [
        g.position.x,
        g.position.y,
        g.position.z,
        g.rotation.x,
        g.rotation.y,
        g.rotation.z,
        g.log_scale[0],
        g.log_scale[1],
        ga,
        g.color.x,
        g.color.y,
        g.color.z,
    ]
}

/// Scene extent used for learning-rate and split-size scaling: 1.1 times the
/// largest camera distance from the mean camera center.
pub fn camera_extent(views: &[CameraView]) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vec3> = views.iter().map(|v| v.pose.camera_center()).collect();
    let mean = centers.iter().fold(Vec3::zeros(), |a, c| a + c) / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Per-iteration learning rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl LearningRates {
    pub fn at(cfg: &PipelineConfig, iteration: usize, extent: f64) -> Self {
        Self {
            position: noise::exp_schedule(cfg.lr_position, cfg.lr_position_final, iteration, cfg.iterations) * extent,
            rotation: cfg.lr_rotation,
            scale: cfg.lr_scale,
            opacity: cfg.lr_opacity,
            color: cfg.lr_color,
        }
    }

    fn per_param(&self) -> [f64; PARAMS] {
        let (p, r, s, o, c) = (self.position, self.rotation, self.scale, self.opacity, self.color);
        [p, p, p, r, r, r, s, s, o, c, c, c]
    }
}

/// Applies one Adam update of `g` to surfel `i`.
fn apply_step(model: &mut SurfelModel, i: usize, g: &[f64; PARAMS], st: &mut Moments, lr: &[f64; PARAMS]) {
    st.steps += 1;
    let b1 = 1.0 - BETA1.powi(st.steps as i32);
    let b2 = 1.0 - BETA2.powi(st.steps as i32);
    let mut d = [0.0; PARAMS];
    for k in 0..PARAMS {
        st.m[k] = BETA1 * st.m[k] + (1.0 - BETA1) * g[k];
        st.v[k] = BETA2 * st.v[k] + (1.0 - BETA2) * g[k] * g[k];
        d[k] = -lr[k] * (st.m[k] / b1) / ((st.v[k] / b2).sqrt() + ADAM_EPS);
    }
    let s = &mut model.surfels[i];
    s.center += Vec3::new(d[0], d[1], d[2]);
    let w = Vec3::new(d[3], d[4], d[5]);
    if w.norm() > 0.0 {
        s.tangent_u = rotate(&s.tangent_u, &w);
        s.tangent_v = rotate(&s.tangent_v, &w);
        s.orthonormalize();
    }
    s.scale_u = (s.scale_u.ln() + d[6]).exp();
    s.scale_v = (s.scale_v.ln() + d[7]).exp();
    s.opacity = sigmoid(logit(s.opacity) + d[8]);
    s.color = (s.color + Vec3::new(d[9], d[10], d[11])).map(|c| c.clamp(0.0, 1.0));
}

/// Recomputes every surfel's ambiguity against the union of surfel centers
/// and `cloud`.
pub fn refresh_ambiguity(model: &mut SurfelModel, cloud: &PointCloud, cfg: &PipelineConfig) -> Result<()> {
    let mut pts = model.centers();
    pts.extend(cloud.points.iter().map(|p| p.position));
    if pts.len() <= cfg.knn_k_ambiguity {
        return Ok(());
    }
    let scores = ambiguity_scores(&pts, cfg.knn_k_ambiguity, cloud.delta, cfg.density_scale_f)?;
    for (s, p) in model.surfels.iter_mut().zip(scores) {
        s.ambiguity = p;
    }
    Ok(())
}

fn mix_seed(seed: u64, iteration: usize, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iteration as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ salt.wrapping_mul(0x94D0_49BB_1331_11EB)
}

pub struct TrainOutput {
    pub model: SurfelModel,
    pub history: Vec<LossBreakdown>,
    pub densification: Vec<(usize, AdcReport)>,
}

/// Trains `model` against `views`. `cloud` is the downsampled scan the
/// periodic ambiguity refresh compares against.
pub fn optimize(
    model: SurfelModel,
    views: &[CameraView],
    cfg: &PipelineConfig,
    cloud: &PointCloud,
    opts: &RenderOptions,
) -> Result<TrainOutput> {
    if views.is_empty() {
        return Err(Error::Input("training needs at least one view".into()));
    }
    let dist = sampling_distribution(views);
    let sampler = WeightedIndex::new(&dist).map_err(|e| Error::Input(format!("view sampling weights: {e}")))?;
    let mut view_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.rng_seed, 0, 1));
    let extent = camera_extent(views);
    let opts = RenderOptions {
        keep_fragments: true,
        ..*opts
    };

    let mut model = model;
    let mut state = vec![Moments::default(); model.len()];
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut densification = Vec::new();

    for it in 1..=cfg.iterations {
        let vi = sampler.sample(&mut view_rng);
        let view = &views[vi];
        let out = render(&model, view, &opts);
        let (losses, grads) = objective_gradient(&out, view, &model, cfg)?;
        if !losses.total.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                checkpoint: Box::new(model),
            });
        }
        history.push(losses);
        let checkpoint = model.clone();

        let lr = LearningRates::at(cfg, it - 1, extent).per_param();
        let (fx, half_w) = (view.intrinsics.fx, view.width() as f64 * 0.5);
        for (i, g) in grads.iter().enumerate() {
            if g.pixels > 0 {
                let s = &mut model.surfels[i];
                s.view_count += 1;
                let gc = view.pose.rotation * g.position;
                let z = out.camera_surfels[i].center.z;
                let screen = z / fx * half_w * (gc.x * gc.x + gc.y * gc.y).sqrt();
                s.grad_stat = s.grad_stat.max(screen);
            }
            let flat = flat_gradient(g, model.surfels[i].opacity);
            apply_step(&mut model, i, &flat, &mut state[i], &lr);
        }

        let ln = noise::exp_schedule(cfg.noise_lr, cfg.noise_lr_final, it - 1, cfg.iterations);
        if ln > 0.0 {
            model = positional_noise(&model, ln, cfg, mix_seed(cfg.rng_seed, it, 2));
        }

        let stats: Vec<f64> = model.surfels.iter().map(|s| s.grad_stat).collect();
        let step = adc_step(&model, &stats, it, cfg, extent, mix_seed(cfg.rng_seed, it, 3));
        if step.report.densified || step.report.opacity_reset {
            debug!("iteration {it}: {:?}, {} surfels", step.report, step.model.len());
            let reset = step.report.opacity_reset;
            state = step
                .origin
                .iter()
                .map(|o| {
                    let mut st = if o.created { Moments::default() } else { state[o.parent] };
                    if reset {
                        st.m[8] = 0.0;
                        st.v[8] = 0.0;
                    }
                    st
                })
                .collect();
            densification.push((it, step.report));
            model = step.model;
        }

        if cfg.density_recalc_interval > 0 && it % cfg.density_recalc_interval == 0 {
            refresh_ambiguity(&mut model, cloud, cfg)?;
        }

        let finite = model
            .surfels
            .iter()
            .all(|s| s.center.iter().all(|c| c.is_finite()) && s.scale_u.is_finite() && s.scale_v.is_finite());
        if !finite {
            return Err(Error::Diverged {
                iteration: it,
                checkpoint: Box::new(checkpoint),
            });
        }
        if it % 500 == 0 || it == cfg.iterations {
            info!("iteration {it}/{}: loss {:.5}, {} surfels", cfg.iterations, losses.total, model.len());
        }
    }
    Ok(TrainOutput {
        model,
        history,
        densification,
    })
}
