//! On-disk pipeline: each stage reads and writes files under an output
//! directory and records a manifest; unchanged stages are skipped.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde_json::json;

use super::manifest::{hash_bytes, Manifest};
use super::{complete, prepare_views, train, ChunkPlan};
use crate::ambiguity::{compute_ambiguity, structural_downsample};
use crate::chunking::{chunk_cloud, chunk_views, finalize_chunk, make_chunks, merge_chunks, Chunk};
use crate::completion::merge;
use crate::error::{Error, Result};
use crate::io::ply::PlyFormat;
use crate::io::{
    read_bytes, read_point_cloud, read_surfel_model, read_views, write_bytes, write_cameras, write_point_cloud,
    write_surfel_model, write_views,
};
use crate::metrics::{evaluate, radius_recall};
use crate::renderer::RenderOptions;
use crate::toy::{build_toy, mesh_obj, ToySpec};
use crate::types::{parse_key_values, PipelineConfig, PointSource, SurfelModel};

/// A named step of the on-disk pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Toy,
    Ambiguity,
    Downsample,
    Uncertainty,
    Chunk,
    Train,
    Complete,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Toy,
        Stage::Ambiguity,
        Stage::Downsample,
        Stage::Uncertainty,
        Stage::Chunk,
        Stage::Train,
        Stage::Complete,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Toy => "toy",
            Stage::Ambiguity => "ambiguity",
            Stage::Downsample => "downsample",
            Stage::Uncertainty => "uncertainty",
            Stage::Chunk => "chunk",
            Stage::Train => "train",
            Stage::Complete => "complete",
            Stage::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }

    /// Comma-separated stage list.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',').filter(|t| !t.trim().is_empty()).map(Stage::parse).collect()
    }
}

/// The `run.*` keys of a config file. Relative paths are taken relative to
/// the config file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    /// `toy` generates the bundled synthetic scene as the input.
    pub scene: Option<String>,
    pub cloud: Option<PathBuf>,
    pub views: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub removed: Option<PathBuf>,
    pub out: PathBuf,
    /// Chunk cell size in meters; 0 trains the scene as one piece.
    pub chunk_cell: f64,
    /// Camera selection distance for chunks; defaults to twice the cell.
    pub visibility_distance: Option<f64>,
    /// Radius-recall radii in multiples of the scan spacing.
    pub radii_delta: Vec<f64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            scene: None,
            cloud: None,
            views: None,
            reference: None,
            removed: None,
            out: PathBuf::from("out"),
            chunk_cell: 0.0,
            visibility_distance: None,
            radii_delta: vec![1.0, 2.0, 4.0],
        }
    }
}

impl RunSettings {
    pub fn from_text(text: &str, base: &Path) -> Result<Self> {
        let mut s = Self::default();
        let path = |v: &str| base.join(v);
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| Error::Config(format!("`{k}`: invalid number `{v}`")));
        for (k, v) in parse_key_values(text)? {
            match k.as_str() {
                "run.scene" => s.scene = Some(v),
                "run.cloud" => s.cloud = Some(path(&v)),
                "run.views" => s.views = Some(path(&v)),
                "run.reference" => s.reference = Some(path(&v)),
                "run.removed" => s.removed = Some(path(&v)),
                "run.out" => s.out = path(&v),
                "run.chunk_cell" => s.chunk_cell = num(&k, &v)?,
                "run.visibility_distance" => s.visibility_distance = Some(num(&k, &v)?),
                "run.radii_delta" => {
                    s.radii_delta = v.split(',').map(|r| num(&k, r.trim())).collect::<Result<_>>()?;
                }
                other if other.starts_with("run.") => return Err(Error::Config(format!("unknown key `{other}`"))),
                _ => {}
            }
        }
        if s.scene.as_deref().is_some_and(|sc| sc != "toy") {
            return Err(Error::Config("`run.scene` only accepts `toy`".into()));
        }
        if s.scene.is_none() && (s.cloud.is_none() || s.views.is_none()) {
            return Err(Error::Config("set `run.scene = toy` or both `run.cloud` and `run.views`".into()));
        }
        Ok(s)
    }

    fn is_toy(&self) -> bool {
        self.scene.as_deref() == Some("toy")
    }

    fn toy_dir(&self) -> PathBuf {
        self.out.join("toy")
    }

    pub fn cloud_path(&self) -> PathBuf {
        self.cloud.clone().unwrap_or_else(|| self.toy_dir().join("lidar.ply"))
    }

    pub fn views_path(&self) -> PathBuf {
        self.views.clone().unwrap_or_else(|| self.toy_dir().join("views"))
    }

    pub fn reference_path(&self) -> Option<PathBuf> {
        self.reference.clone().or_else(|| self.is_toy().then(|| self.toy_dir().join("gt.ply")))
    }

    pub fn removed_path(&self) -> Option<PathBuf> {
        self.removed.clone().or_else(|| self.is_toy().then(|| self.toy_dir().join("removed.ply")))
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn chunk_plan(&self) -> Option<ChunkPlan> {
        (self.chunk_cell > 0.0).then(|| ChunkPlan {
            cell_size: self.chunk_cell,
            visibility_distance: self.visibility_distance.unwrap_or(2.0 * self.chunk_cell),
        })
    }

    fn fingerprint(&self) -> String {
        format!(
            "scene={:?} chunk_cell={} visibility={:?} radii={:?}",
            self.scene, self.chunk_cell, self.visibility_distance, self.radii_delta
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StageStatus {
    Ran { seconds: f64 },
    Skipped,
}

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub stages: Vec<(Stage, StageStatus)>,
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write_bytes(path, serde_json::to_string_pretty(value)?.as_bytes())
}

/// Inputs and outputs of one stage.
fn stage_files(stage: Stage, s: &RunSettings) -> (Vec<PathBuf>, Vec<PathBuf>) {
    let a = |n: &str| s.artifact(n);
    match stage {
        Stage::Toy => {
            let t = s.toy_dir();
            (vec![], vec![t.join("scene.obj"), t.join("toy.mtl"), t.join("gt.ply"), t.join("lidar.ply"), t.join("removed.ply"), t.join("views")])
        }
        Stage::Ambiguity => (vec![s.cloud_path()], vec![a("ambiguity.ply")]),
        Stage::Downsample => (vec![a("ambiguity.ply")], vec![a("downsampled.ply")]),
        Stage::Uncertainty => (vec![s.views_path()], vec![a("views")]),
        Stage::Chunk => (vec![a("downsampled.ply"), a("views")], vec![a("chunks")]),
        Stage::Train => {
            let mut inputs = vec![a("downsampled.ply"), a("views")];
            if s.chunk_plan().is_some() {
                inputs.push(a("chunks"));
            }
            (inputs, vec![a("model.ply")])
        }
        Stage::Complete => (
            vec![a("model.ply"), a("ambiguity.ply")],
            vec![a("filtered.ply"), a("completed.ply"), a("filter_report.json")],
        ),
        Stage::Eval => {
            let mut inputs = vec![a("completed.ply")];
            inputs.extend(s.reference_path());
            inputs.extend(s.removed_path());
            (inputs, vec![a("report.json")])
        }
    }
}

fn applicable(stage: Stage, s: &RunSettings) -> bool {
    match stage {
        Stage::Toy => s.is_toy(),
        Stage::Chunk => s.chunk_plan().is_some(),
        Stage::Eval => s.reference_path().is_some(),
        _ => true,
    }
}

fn execute(stage: Stage, s: &RunSettings, cfg: &PipelineConfig, opts: &RenderOptions) -> Result<()> {
    let a = |n: &str| s.artifact(n);
    match stage {
        Stage::Toy => {
            write_toy(&s.toy_dir(), &ToySpec::default())
        }
        Stage::Ambiguity => {
            let cloud = read_point_cloud(&s.cloud_path())?;
            let scored = compute_ambiguity(&cloud, cfg.knn_k_ambiguity, cfg.density_scale_f, cfg.tau)?;
            write_point_cloud(&scored, &a("ambiguity.ply"), PlyFormat::BinaryLittleEndian)
        }
        Stage::Downsample => {
            let scored = read_point_cloud(&a("ambiguity.ply"))?;
            let down = structural_downsample(&scored, cfg.tau, cfg.keep_fraction_low, cfg.rng_seed)?;
            write_point_cloud(&down, &a("downsampled.ply"), PlyFormat::BinaryLittleEndian)
        }
        Stage::Uncertainty => {
            let views = prepare_views(&read_views(&s.views_path())?, cfg)?;
            write_views(&a("views"), &views)
        }
        Stage::Chunk => {
            let plan = s.chunk_plan().expect("chunk stage requires a plan");
            let cloud = read_point_cloud(&a("downsampled.ply"))?;
            let views = read_views(&a("views"))?;
            let chunks = make_chunks(&cloud, &views, plan.cell_size, plan.visibility_distance, cfg.chunk_extension)?;
            let root = a("chunks");
            if root.exists() {
                std::fs::remove_dir_all(&root).map_err(|e| Error::io(&root, e))?;
            }
            for chunk in &chunks {
                let dir = root.join(&chunk.id);
                mkdir(&dir)?;
                write_point_cloud(&chunk_cloud(&cloud, chunk), &dir.join("cloud.ply"), PlyFormat::BinaryLittleEndian)?;
                write_cameras(&dir, &chunk_views(&views, chunk))?;
                write_bytes(&dir.join("chunk.json"), serde_json::to_string_pretty(chunk)?.as_bytes())?;
            }
            Ok(())
        }
        Stage::Train => {
            let views = read_views(&a("views"))?;
            let model = match s.chunk_plan() {
                None => train(&read_point_cloud(&a("downsampled.ply"))?, &views, cfg, opts)?.model,
                Some(_) => train_chunk_dirs(&a("chunks"), &views, cfg, opts)?,
            };
            write_surfel_model(&model, &a("model.ply"))
        }
        Stage::Complete => {
            let trained = read_surfel_model(&a("model.ply"))?;
            let scored = read_point_cloud(&a("ambiguity.ply"))?;
            let (filtered, report, completed) = complete(&trained, &scored, cfg)?;
            write_surfel_model(&filtered, &a("filtered.ply"))?;
            write_point_cloud(&merge(&scored, &completed), &a("completed.ply"), PlyFormat::BinaryLittleEndian)?;
            write_json(&a("filter_report.json"), &report.to_json())
        }
        Stage::Eval => {
            let merged = read_point_cloud(&a("completed.ply"))?;
            let reference = read_point_cloud(&s.reference_path().expect("eval requires a reference"))?;
            let mut report = serde_json::to_value(evaluate(&merged, &reference, cfg.f1_threshold)?)?;
            let completed = merged.filtered(|_, p| p.source == PointSource::Completed);
            report["completed_points"] = json!(completed.len());
            if !completed.is_empty() {
                report["completed_precision"] = json!(evaluate(&completed, &reference, cfg.f1_threshold)?.precision);
            }
            if let Some(removed) = s.removed_path() {
                let removed = read_point_cloud(&removed)?;
                let radii: Vec<f64> = s.radii_delta.iter().map(|r| r * merged.delta).collect();
                report["radius_recall"] = json!(radius_recall(&merged, &removed, &radii)?);
            }
            write_json(&a("report.json"), &report)
        }
    }
}

/// Writes the toy scene: mesh, ground truth, degraded scan, removed points
/// and the rendered views.
pub fn write_toy(dir: &Path, spec: &ToySpec) -> Result<()> {
    let toy = build_toy(spec)?;
    mkdir(dir)?;
    let (obj, mtl) = mesh_obj(&toy.mesh);
    write_bytes(&dir.join("scene.obj"), obj.as_bytes())?;
    write_bytes(&dir.join("toy.mtl"), mtl.as_bytes())?;
    write_point_cloud(&toy.gt, &dir.join("gt.ply"), PlyFormat::BinaryLittleEndian)?;
    write_point_cloud(&toy.lidar, &dir.join("lidar.ply"), PlyFormat::BinaryLittleEndian)?;
    write_point_cloud(&toy.removed, &dir.join("removed.ply"), PlyFormat::BinaryLittleEndian)?;
    write_views(&dir.join("views"), &toy.views)
}

/// Trains every chunk directory written by the chunk stage, stores each
/// trimmed model next to it and returns the merged model.
pub fn train_chunk_dirs(root: &Path, views: &[crate::types::CameraView], cfg: &PipelineConfig, opts: &RenderOptions) -> Result<SurfelModel> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("chunk.json").exists())
        .collect();
    dirs.sort();
    let mut parts = Vec::new();
    for dir in dirs {
        let chunk: Chunk = serde_json::from_slice(&read_bytes(&dir.join("chunk.json"))?)?;
        let cloud = read_point_cloud(&dir.join("cloud.ply"))?;
        let sub_views = chunk_views(views, &chunk);
        if cloud.len() <= cfg.knn_k_ambiguity.max(cfg.normal_knn) || sub_views.is_empty() {
            info!("chunk {} skipped: {} points, {} views", chunk.id, cloud.len(), sub_views.len());
            continue;
        }
        let out = train(&cloud, &sub_views, cfg, opts).map_err(|e| Error::Stage {
            stage: format!("train {}", chunk.id),
            source: Box::new(e),
        })?;
        let trimmed = finalize_chunk(&out.model, &chunk);
        write_surfel_model(&trimmed, &dir.join("model.ply"))?;
        parts.push(trimmed);
    }
    Ok(merge_chunks(&parts)?.0)
}

/// Runs the selected stages (all applicable ones when `only` is `None`) in
/// pipeline order.
pub fn run_pipeline(settings: &RunSettings, cfg: &PipelineConfig, only: Option<&[Stage]>) -> Result<RunSummary> {
    let opts = RenderOptions::default();
    let config_hash = hash_bytes(format!("{}\n{}", cfg.to_text(), settings.fingerprint()).as_bytes());
    mkdir(&settings.out)?;
    let mut summary = RunSummary::default();
    for stage in Stage::ALL {
        if only.is_some_and(|o| !o.contains(&stage)) || !applicable(stage, settings) {
            continue;
        }
        let wrap = |e: Error| Error::Stage {
            stage: stage.name().to_string(),
            source: Box::new(e),
        };
        let (inputs, outputs) = stage_files(stage, settings);
        let manifest_path = settings.artifact("manifests").join(format!("{}.json", stage.name()));
        let mut manifest = Manifest::new(stage.name(), &config_hash, cfg.rng_seed, &inputs).map_err(wrap)?;
        if let Some(prev) = Manifest::read(&manifest_path).map_err(wrap)? {
            if manifest.satisfied_by(&prev).map_err(wrap)? {
                info!("stage {}: up to date", stage.name());
                summary.stages.push((stage, StageStatus::Skipped));
                continue;
            }
        }
        info!("stage {}: running", stage.name());
        let t0 = Instant::now();
        execute(stage, settings, cfg, &opts).map_err(wrap)?;
        manifest.seconds = t0.elapsed().as_secs_f64();
        manifest.record_outputs(&outputs).map_err(wrap)?;
        manifest.write(&manifest_path).map_err(wrap)?;
        summary.stages.push((stage, StageStatus::Ran { seconds: manifest.seconds }));
    }
    Ok(summary)
}
