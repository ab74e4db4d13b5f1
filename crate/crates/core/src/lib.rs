//! SurfFill: completing LiDAR scans by growing Gaussian surfels into the
//! regions a scanner missed.
//!
//! The crate is organised along the pipeline:
//!
//! * [`ambiguity`] scores every scan point by its local inverse density and
//!   drives the structural downsampling and surfel initialisation.
//! * [`uncertainty`] turns per-view normal maps into uncertainty maps, masks
//!   and training-view sampling weights.
//! * [`renderer`] rasterises surfels (forward and analytic backward pass).
//! * [`optimizer`] runs the focused surfel optimisation.
//! * [`completion`] filters the trained surfels and samples new points.
//! * [`chunking`] splits large scenes into independently trained cells.
//! * [`metrics`] evaluates clouds (Chamfer, precision/recall/F1, radius recall).
//! * [`lidar_sim`] produces ground-truth/degraded scan pairs for evaluation.
//! * [`pipeline`] orchestrates the stages with resumable manifests.

pub mod ambiguity;
pub mod chunking;
pub mod completion;
pub mod error;
pub mod geometry;
pub mod io;
pub mod knn;
pub mod lidar_sim;
pub mod metrics;
pub mod optimizer;
pub mod parallel;
pub mod pipeline;
pub mod renderer;
pub mod toy;
pub mod types;
pub mod uncertainty;

pub use error::{Error, Result};
pub use types::{
    Aabb, CameraView, Grid, Intrinsics, PipelineConfig, PointCloud, PointSource, Pose, ScanPoint,
    Surfel, SurfelModel, Validate, Vec3,
};
