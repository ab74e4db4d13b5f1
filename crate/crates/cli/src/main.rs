//! `surffill` command-line front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use surffill::ambiguity::{compute_ambiguity, structural_downsample};
use surffill::chunking::{chunk_cloud, chunk_views, make_chunks, merge_chunks};
use surffill::completion::merge;
use surffill::error::{Error, Result};
use surffill::io::image::{encode_pfm_scalar, encode_rgb8};
use surffill::io::obj::read_obj;
use surffill::io::ply::PlyFormat;
use surffill::io::{
    read_bytes, read_config, read_point_cloud, read_surfel_model, read_views, write_bytes, write_cameras,
    write_point_cloud, write_surfel_model, write_views,
};
use surffill::lidar_sim::{degrade_cloud, simulate_scan, ScanSetup};
use surffill::metrics::{evaluate, radius_recall};
use surffill::optimizer::losses::LossBreakdown;
use surffill::parallel::with_workers;
use surffill::pipeline::runner::{train_chunk_dirs, write_toy};
use surffill::pipeline::{complete, prepare_views, run_pipeline, train, RunSettings, Stage, StageStatus};
use surffill::renderer::{render, RenderOptions};
use surffill::toy::ToySpec;
use surffill::types::{Grid, PipelineConfig, PointSource};

#[derive(Parser)]
#[command(name = "surffill", version, about = "Complete LiDAR scans with Gaussian surfels")]
struct Cli {
    /// Pipeline config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Write ASCII instead of binary PLY.
    #[arg(long, global = true)]
    ascii: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ray-cast a mesh into ground-truth and degraded scans.
    Simulate(SimulateArgs),
    /// Score every point of a scan by local inverse density.
    Ambiguity(AmbiguityArgs),
    /// Keep all high-ambiguity points and a random share of the rest.
    Downsample(DownsampleArgs),
    /// Compute uncertainty maps, masks and sampling weights for a view set.
    Uncertainty(UncertaintyArgs),
    /// Split a scan and its views into independently trainable cells.
    Chunk(ChunkArgs),
    /// Initialise surfels from a scan and optimise them against the views.
    Train(TrainArgs),
    /// Render a surfel model from one view.
    Render(RenderArgs),
    /// Filter a trained model and sample completion points.
    Complete(CompleteArgs),
    /// Merge the trained models of a chunk directory.
    MergeChunks(MergeArgs),
    /// Compare a cloud against a reference.
    Eval(EvalArgs),
    /// Run the staged pipeline described by `--config`.
    Run(RunArgs),
    /// Write the bundled synthetic scene.
    Toy(ToyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// OBJ mesh with optional MTL materials.
    #[arg(long)]
    scene: PathBuf,
    /// JSON scan setup: poses, pattern, beam, delta, removal rules.
    #[arg(long)]
    poses: PathBuf,
    #[arg(long)]
    out_gt: PathBuf,
    #[arg(long)]
    out_degraded: PathBuf,
    /// Where to write the points removed by the removal rules.
    #[arg(long)]
    out_removed: Option<PathBuf>,
}

#[derive(Args)]
struct AmbiguityArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct DownsampleArgs {
    /// Cloud with ambiguity scores (computed if absent).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    keep: Option<f64>,
}

#[derive(Args)]
struct UncertaintyArgs {
    #[arg(long)]
    views: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Output view directory (defaults to updating `--views` in place).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ChunkArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    views: PathBuf,
    #[arg(long)]
    cell: f64,
    /// Camera selection distance (defaults to twice the cell size).
    #[arg(long)]
    visibility: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Downsampled scan. Ignored with `--chunks`.
    #[arg(long, required_unless_present = "chunks")]
    cloud: Option<PathBuf>,
    /// View directory with uncertainty masks (computed if missing).
    #[arg(long)]
    views: PathBuf,
    /// Train every chunk of a `chunk` output directory instead.
    #[arg(long)]
    chunks: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration loss components as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    views: PathBuf,
    #[arg(long)]
    view: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    depth: Option<PathBuf>,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    model: PathBuf,
    /// Full LiDAR scan.
    #[arg(long)]
    cloud: PathBuf,
    /// Scan plus completion points.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Surviving surfels.
    #[arg(long)]
    filtered: Option<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    /// Directory written by `chunk` and trained by `train --chunks`.
    dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Points deleted from the scan, for radius recall of completion points.
    #[arg(long)]
    removed: Option<PathBuf>,
    /// Radius-recall radii in multiples of the candidate spacing.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    radii: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Comma-separated subset of toy, ambiguity, downsample, uncertainty,
    /// chunk, train, complete, eval.
    #[arg(long)]
    stages: Option<String>,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    out: PathBuf,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => read_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    Ok(cfg)
}

fn ply_format(cli: &Cli) -> PlyFormat {
    if cli.ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write_bytes(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn write_loss_log(path: &Path, history: &[LossBreakdown]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "iteration,{}", LossBreakdown::COLUMNS.join(",")).map_err(io)?;
    for (i, l) in history.iter().enumerate() {
        let row: Vec<String> = l.values().iter().map(|v| v.to_string()).collect();
        writeln!(w, "{},{}", i + 1, row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn with_masks(views: Vec<surffill::types::CameraView>, cfg: &PipelineConfig) -> Result<Vec<surffill::types::CameraView>> {
    if views.iter().all(|v| v.mask.data.iter().any(|&m| m > 0)) {
        Ok(views)
    } else {
        prepare_views(&views, cfg)
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let fmt = ply_format(cli);
    let opts = RenderOptions::default();
    match &cli.command {
        Command::Simulate(a) => {
            let scene = read_obj(&a.scene)?;
            let setup: ScanSetup = serde_json::from_slice(&read_bytes(&a.poses)?)?;
            let scan = simulate_scan(&scene, &setup.poses, &setup.pattern, &setup.beam, setup.delta, cfg.rng_seed)?;
            info!("{:?}", scan.report);
            let degraded = degrade_cloud(&scan.degraded, &setup.removal, cfg.rng_seed)?;
            for (rule, n) in setup.removal.iter().zip(&degraded.matched) {
                if *n == 0 {
                    warn!("removal rule {:?} matched no points", rule.region);
                }
            }
            write_point_cloud(&scan.gt, &a.out_gt, fmt)?;
            write_point_cloud(&degraded.kept, &a.out_degraded, fmt)?;
            if let Some(p) = &a.out_removed {
                write_point_cloud(&degraded.removed, p, fmt)?;
            }
            Ok(())
        }
        Command::Ambiguity(a) => {
            let cloud = read_point_cloud(&a.input)?;
            let scored = compute_ambiguity(
                &cloud,
                a.k.unwrap_or(cfg.knn_k_ambiguity),
                cfg.density_scale_f,
                a.tau.unwrap_or(cfg.tau),
            )?;
            write_point_cloud(&scored, &a.out, fmt)
        }
        Command::Downsample(a) => {
            let tau = a.tau.unwrap_or(cfg.tau);
            let cloud = read_point_cloud(&a.input)?;
            let scored = if cloud.points.iter().all(|p| p.ambiguity.is_finite()) {
                cloud
            } else {
                compute_ambiguity(&cloud, cfg.knn_k_ambiguity, cfg.density_scale_f, tau)?
            };
            let down = structural_downsample(&scored, tau, a.keep.unwrap_or(cfg.keep_fraction_low), cfg.rng_seed)?;
            info!("kept {} of {} points", down.len(), scored.len());
            write_point_cloud(&down, &a.out, fmt)
        }
        Command::Uncertainty(a) => {
            let mut cfg = cfg;
            if let Some(t) = a.threshold {
                cfg.uncertainty_threshold = t;
            }
            let views = prepare_views(&read_views(&a.views)?, &cfg)?;
            write_views(a.out.as_ref().unwrap_or(&a.views), &views)
        }
        Command::Chunk(a) => {
            let cloud = read_point_cloud(&a.cloud)?;
            let views = read_views(&a.views)?;
            let vis = a.visibility.unwrap_or(2.0 * a.cell);
            let chunks = make_chunks(&cloud, &views, a.cell, vis, cfg.chunk_extension)?;
            for chunk in &chunks {
                let dir = a.out.join(&chunk.id);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_point_cloud(&chunk_cloud(&cloud, chunk), &dir.join("cloud.ply"), fmt)?;
                write_cameras(&dir, &chunk_views(&views, chunk))?;
                write_json(&dir.join("chunk.json"), chunk)?;
            }
            info!("wrote {} chunks", chunks.len());
            Ok(())
        }
        Command::Train(a) => {
            let views = with_masks(read_views(&a.views)?, &cfg)?;
            let model = match (&a.chunks, &a.cloud) {
                (Some(dir), _) => train_chunk_dirs(dir, &views, &cfg, &opts)?,
                (None, Some(cloud)) => {
                    let out = train(&read_point_cloud(cloud)?, &views, &cfg, &opts)?;
                    if let Some(log) = &a.log {
                        write_loss_log(log, &out.history)?;
                    }
                    out.model
                }
                (None, None) => return Err(Error::Input("`--cloud` or `--chunks` is required".into())),
            };
            write_surfel_model(&model, &a.out)
        }
        Command::Render(a) => {
            let model = read_surfel_model(&a.model)?;
            let views = read_views(&a.views)?;
            let view = views
                .iter()
                .find(|v| v.id == a.view)
                .ok_or_else(|| Error::Input(format!("no view `{}` in {}", a.view, a.views.display())))?;
            let out = render(&model, view, &RenderOptions { keep_fragments: false, ..opts });
            write_bytes(&a.out, &encode_rgb8(&out.color)?)?;
            if let Some(p) = &a.depth {
                let depth = Grid::from_fn(out.width(), out.height(), |x, y| out.expected_depth(x, y, 0.0).unwrap_or(0.0));
                write_bytes(p, &encode_pfm_scalar(&depth)?)?;
            }
            Ok(())
        }
        Command::Complete(a) => {
            let trained = read_surfel_model(&a.model)?;
            let cloud = read_point_cloud(&a.cloud)?;
            let scored = compute_ambiguity(&cloud, cfg.knn_k_ambiguity, cfg.density_scale_f, cfg.tau)?;
            let (filtered, report, completed) = complete(&trained, &scored, &cfg)?;
            info!("{} surfels kept, {} points sampled", filtered.len(), completed.len());
            write_point_cloud(&merge(&scored, &completed), &a.out, fmt)?;
            if let Some(p) = &a.report {
                write_json(p, &report.to_json())?;
            }
            if let Some(p) = &a.filtered {
                write_surfel_model(&filtered, p)?;
            }
            Ok(())
        }
        Command::MergeChunks(a) => {
            let mut dirs: Vec<PathBuf> = std::fs::read_dir(&a.dir)
                .map_err(|e| Error::io(&a.dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path().join("model.ply")))
                .filter(|p| p.exists())
                .collect();
            dirs.sort();
            let parts = dirs.iter().map(|p| read_surfel_model(p)).collect::<Result<Vec<_>>>()?;
            let (model, duplicates) = merge_chunks(&parts)?;
            if duplicates > 0 {
                warn!("{duplicates} surfels appear in more than one chunk");
            }
            write_surfel_model(&model, &a.out)
        }
        Command::Eval(a) => {
            let candidate = read_point_cloud(&a.candidate)?;
            let reference = read_point_cloud(&a.reference)?;
            let threshold = a.threshold.unwrap_or(cfg.f1_threshold);
            let mut report = serde_json::to_value(evaluate(&candidate, &reference, threshold)?)?;
            if let Some(p) = &a.removed {
                let removed = read_point_cloud(p)?;
                let radii: Vec<f64> = a.radii.iter().map(|r| r * candidate.delta).collect();
                report["radius_recall"] = serde_json::to_value(radius_recall(&candidate, &removed, &radii)?)?;
            }
            let completed = candidate.filtered(|_, p| p.source == PointSource::Completed);
            if !completed.is_empty() {
                report["completed_precision"] = serde_json::json!(evaluate(&completed, &reference, threshold)?.precision);
            }
            let text = serde_json::to_string_pretty(&report)?;
            match &a.out {
                Some(p) => write_bytes(p, text.as_bytes()),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::Run(a) => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Error::Config("`run` needs `--config`".into()))?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let base = path.parent().unwrap_or(Path::new("."));
            let settings = RunSettings::from_text(&text, base)?;
            let stages = a.stages.as_deref().map(Stage::parse_list).transpose()?;
            let summary = run_pipeline(&settings, &cfg, stages.as_deref())?;
            for (stage, status) in summary.stages {
                match status {
                    StageStatus::Ran { seconds } => println!("{:<12} ran in {seconds:.2}s", stage.name()),
                    StageStatus::Skipped => println!("{:<12} up to date", stage.name()),
                }
            }
            Ok(())
        }
        Command::Toy(a) => write_toy(&a.out, &ToySpec::default()),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Ambiguity(_) => "ambiguity",
        Command::Downsample(_) => "downsample",
        Command::Uncertainty(_) => "uncertainty",
        Command::Chunk(_) => "chunk",
        Command::Train(_) => "train",
        Command::Render(_) => "render",
        Command::Complete(_) => "complete",
        Command::MergeChunks(_) => "merge-chunks",
        Command::Eval(_) => "eval",
        Command::Run(_) => "run",
        Command::Toy(_) => "toy",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match with_workers(cli.workers, || execute(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = match e {
                e @ Error::Stage { .. } => e,
                e => Error::Stage {
                    stage: command_name(&cli.command).to_string(),
                    source: Box::new(e),
                },
            };
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
