//! End-to-end orchestration: ambiguity, downsampling, uncertainty, optional
//! chunking, training, filtering/sampling, merging.

pub mod manifest;
pub mod runner;

use log::info;

use crate::ambiguity::{compute_ambiguity, init_surfels, structural_downsample};
use crate::chunking::{chunk_cloud, chunk_views, finalize_chunk, make_chunks, merge_chunks};
use crate::completion::{filter_surfels, merge, sample_points, FilterReport, SamplingParams};
use crate::error::{Error, Result};
use crate::optimizer::{optimize, TrainOutput};
use crate::renderer::RenderOptions;
pub use runner::{run_pipeline, train_chunk_dirs, write_toy, RunSettings, RunSummary, Stage, StageStatus};

use crate::types::{CameraView, PipelineConfig, PointCloud, SurfelModel};
use crate::uncertainty::{compute_uncertainty, threshold_mask, view_sampling_weights};

/// Square chunk layout for [`train_chunked`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChunkPlan {
    pub cell_size: f64,
    pub visibility_distance: f64,
}

/// Uncertainty maps and masks for every view.
pub fn prepare_views(views: &[CameraView], cfg: &PipelineConfig) -> Result<Vec<CameraView>> {
    views
        .iter()
        .map(|v| compute_uncertainty(v).map(|u| threshold_mask(&u, cfg.uncertainty_threshold)))
        .collect()
}

/// Initialises surfels from `cloud`, weights the views and trains.
pub fn train(cloud: &PointCloud, views: &[CameraView], cfg: &PipelineConfig, opts: &RenderOptions) -> Result<TrainOutput> {
    let model = init_surfels(cloud, cfg, views)?;
    let views = view_sampling_weights(views, &model, cfg.tau);
    info!("training {} surfels on {} views", model.len(), views.len());
    optimize(model, &views, cfg, cloud, opts)
}

/// Trains every chunk independently, trims each to its cell and merges.
pub fn train_chunked(
    cloud: &PointCloud,
    views: &[CameraView],
    cfg: &PipelineConfig,
    opts: &RenderOptions,
    plan: &ChunkPlan,
) -> Result<SurfelModel> {
    let chunks = make_chunks(cloud, views, plan.cell_size, plan.visibility_distance, cfg.chunk_extension)?;
    let mut parts = Vec::new();
    for chunk in &chunks {
        let sub = chunk_cloud(cloud, chunk);
        let sub_views = chunk_views(views, chunk);
        if sub.len() <= cfg.knn_k_ambiguity.max(cfg.normal_knn) || sub_views.is_empty() {
            info!("chunk {} skipped: {} points, {} views", chunk.id, sub.len(), sub_views.len());
            continue;
        }
        info!("chunk {}: {} points, {} views", chunk.id, sub.len(), sub_views.len());
        let out = train(&sub, &sub_views, cfg, opts).map_err(|e| Error::Stage {
            stage: format!("train {}", chunk.id),
            source: Box::new(e),
        })?;
        parts.push(finalize_chunk(&out.model, chunk));
    }
    Ok(merge_chunks(&parts)?.0)
}

/// Everything an in-memory run produces.
pub struct Completion {
    pub scored: PointCloud,
    pub downsampled: PointCloud,
    pub trained: SurfelModel,
    pub filtered: SurfelModel,
    pub filter_report: FilterReport,
    /// Completion points only.
    pub completed: PointCloud,
    /// Scan plus completion points.
    pub merged: PointCloud,
}

/// Filters the trained model against the scored scan and samples points.
pub fn complete(trained: &SurfelModel, scored: &PointCloud, cfg: &PipelineConfig) -> Result<(SurfelModel, FilterReport, PointCloud)> {
    let (filtered, report) = filter_surfels(trained, scored, cfg)?;
    let completed = if filtered.is_empty() {
        PointCloud::new(Vec::new(), scored.delta)
    } else {
        sample_points(&filtered, &SamplingParams::from_config(cfg, scored.delta), cfg.rng_seed)?
    };
    Ok((filtered, report, completed))
}

/// Runs the whole pipeline on a scan and its views.
pub fn run_in_memory(
    lidar: &PointCloud,
    views: &[CameraView],
    cfg: &PipelineConfig,
    opts: &RenderOptions,
    chunks: Option<&ChunkPlan>,
) -> Result<Completion> {
    let scored = compute_ambiguity(lidar, cfg.knn_k_ambiguity, cfg.density_scale_f, cfg.tau)?;
    let downsampled = structural_downsample(&scored, cfg.tau, cfg.keep_fraction_low, cfg.rng_seed)?;
    let views = prepare_views(views, cfg)?;
    let trained = match chunks {
        Some(plan) => train_chunked(&downsampled, &views, cfg, opts, plan)?,
        None => train(&downsampled, &views, cfg, opts)?.model,
    };
    let (filtered, filter_report, completed) = complete(&trained, &scored, cfg)?;
    let merged = merge(lidar, &completed);
    Ok(Completion {
        scored,
        downsampled,
        trained,
        filtered,
        filter_report,
        completed,
        merged,
    })
}
