//! Adaptive density control: clone/split on the running-max screen gradient,
//! ambiguity-aware pruning and opacity resets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::types::{PipelineConfig, Surfel, SurfelModel};

/// Where a surfel of the new model came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Origin {
    /// Index in the model passed to [`adc_step`].
    pub parent: usize,
    /// True for surfels created by this step (clones and split children).
    pub created: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AdcReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub opacity_reset: bool,
    pub densified: bool,
}

pub struct AdcOutcome {
    pub model: SurfelModel,
    pub origin: Vec<Origin>,
    pub report: AdcReport,
}

/// Opacity below which a surfel is removed: the base threshold for
/// high-ambiguity surfels, `base / factor` for the rest.
pub fn prune_threshold(surfel: &Surfel, cfg: &PipelineConfig) -> f64 {
    if surfel.ambiguity > cfg.tau {
        cfg.prune_opacity_base
    } else {
        cfg.prune_opacity_base / cfg.prune_opacity_factor
    }
}

pub fn should_prune(surfel: &Surfel, cfg: &PipelineConfig) -> bool {
    !(surfel.opacity >= prune_threshold(surfel, cfg)) || !surfel.center.iter().all(|c| c.is_finite())
}

pub fn is_densify_iteration(iteration: usize, cfg: &PipelineConfig) -> bool {
    cfg.densify_interval > 0
        && iteration >= cfg.densify_start
        && iteration <= cfg.densify_until
        && iteration % cfg.densify_interval == 0
}

pub fn is_reset_iteration(iteration: usize, cfg: &PipelineConfig) -> bool {
    cfg.opacity_reset_interval > 0
        && iteration > 0
        && iteration < cfg.densify_until
        && iteration % cfg.opacity_reset_interval == 0
}

/// One density-control step at `iteration`. `grad_stats[i]` is the running
/// maximum screen-space gradient of surfel `i`; `extent` is the scene size
/// that `percent_dense` refers to.
pub fn adc_step(
    model: &SurfelModel,
    grad_stats: &[f64],
    iteration: usize,
    cfg: &PipelineConfig,
    extent: f64,
    seed: u64,
) -> AdcOutcome {
    assert_eq!(grad_stats.len(), model.len());
    let mut report = AdcReport::default();
    let mut surfels = Vec::with_capacity(model.len());
    let mut origin = Vec::with_capacity(model.len());

    if is_densify_iteration(iteration, cfg) {
        report.densified = true;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut budget = cfg.max_surfels.saturating_sub(model.len());
        let split_size = cfg.percent_dense * extent;
        let mut created: Vec<(usize, Surfel)> = Vec::new();
        for (i, s) in model.surfels.iter().enumerate() {
            let hot = grad_stats[i] > cfg.densify_grad_threshold;
            if hot && s.max_scale() > split_size && budget >= 1 {
                // Two children replace the parent.
                for _ in 0..2 {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    let mut c = s.clone();
                    c.center = s.center + s.tangent_u * (a * s.scale_u) + s.tangent_v * (b * s.scale_v);
                    c.scale_u = s.scale_u * 0.5;
                    c.scale_v = s.scale_v * 0.5;
                    c.was_densified = true;
                    c.grad_stat = 0.0;
                    created.push((i, c));
                }
                budget -= 1;
                report.split += 1;
            } else {
                let mut keep = s.clone();
                keep.grad_stat = 0.0;
                surfels.push(keep);
                origin.push(Origin {
                    parent: i,
                    created: false,
                });
                if hot && budget >= 1 && s.max_scale() <= split_size {
                    let mut c = s.clone();
                    c.was_densified = true;
                    c.grad_stat = 0.0;
                    created.push((i, c));
                    budget -= 1;
                    report.cloned += 1;
                }
            }
        }
        for (parent, c) in created {
            surfels.push(c);
            origin.push(Origin { parent, created: true });
        }
        let before = surfels.len();
        let mut kept_s = Vec::with_capacity(before);
        let mut kept_o = Vec::with_capacity(before);
        for (s, o) in surfels.into_iter().zip(origin) {
            if !should_prune(&s, cfg) {
                kept_s.push(s);
                kept_o.push(o);
            }
        }
        report.pruned = before - kept_s.len();
        surfels = kept_s;
        origin = kept_o;
    } else {
        surfels = model.surfels.clone();
        origin = (0..model.len())
            .map(|parent| Origin {
                parent,
                created: false,
            })
            .collect();
    }

    if is_reset_iteration(iteration, cfg) {
        report.opacity_reset = true;
        for s in &mut surfels {
            s.opacity = s.opacity.min(0.01);
        }
    }

    AdcOutcome {
        model: SurfelModel::new(surfels),
        origin,
        report,
    }
}
