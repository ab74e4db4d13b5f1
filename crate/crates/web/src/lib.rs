//! Browser bindings for three small demos: the ambiguity heatmap of an
//! editable point lattice, an orbit render of a few surfels, and the
//! opacity-dependent noise gain.

use wasm_bindgen::prelude::*;

use surffill::ambiguity::ambiguity_scores;
use surffill::geometry::frame_from_normal;
use surffill::io::image::to_rgba8;
use surffill::optimizer::noise::noise_gain;
use surffill::renderer::{render, RenderOptions};
use surffill::types::{CameraView, Grid, Intrinsics, Pose, Surfel, SurfelModel, Vec3};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Ambiguity of planar points given as interleaved `x, y` pairs.
#[wasm_bindgen]
pub fn ambiguity_2d(xy: &[f64], k: usize, delta: f64) -> Result<Vec<f64>, JsError> {
    let pts: Vec<Vec3> = xy.chunks_exact(2).map(|c| Vec3::new(c[0], c[1], 0.0)).collect();
    ambiguity_scores(&pts, k, delta, 1000.0).map_err(js_err)
}

/// `sigmoid(-k (1 - alpha - t))` sampled at `samples` opacities in [0, 1].
#[wasm_bindgen]
pub fn noise_gain_curve(k: f64, t: f64, samples: usize) -> Vec<f64> {
    let n = samples.max(2);
    (0..n).map(|i| noise_gain(i as f64 / (n - 1) as f64, k, t)).collect()
}

/// A handful of surfels rendered from an orbiting camera.
#[wasm_bindgen]
#[derive(Default)]
pub struct SurfelScene {
    model: SurfelModel,
}

#[wasm_bindgen]
impl SurfelScene {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a surfel; the normal need not be unit length.
    #[allow(clippy::too_many_arguments)]
    pub fn add(&mut self, x: f64, y: f64, z: f64, nx: f64, ny: f64, nz: f64, su: f64, sv: f64, opacity: f64, r: f64, g: f64, b: f64) -> Result<(), JsError> {
        let n = Vec3::new(nx, ny, nz);
        if !(n.norm() > 0.0 && su > 0.0 && sv > 0.0) {
            return Err(JsError::new("normal must be non-zero and scales positive"));
        }
        let (tu, tv) = frame_from_normal(&n.normalize());
        let mut s = Surfel::new(Vec3::new(x, y, z), tu, tv, su, sv);
        s.opacity = opacity.clamp(0.0, 1.0);
        s.color = Vec3::new(r, g, b);
        self.model.surfels.push(s);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.model.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model.is_empty()
    }

    pub fn set_opacity(&mut self, i: usize, opacity: f64) {
        if let Some(s) = self.model.surfels.get_mut(i) {
            s.opacity = opacity.clamp(0.0, 1.0);
        }
    }

    /// RGBA8 image seen from azimuth/elevation (radians) at `distance` from
    /// the origin, z up.
    pub fn render(&self, width: usize, height: usize, azimuth: f64, elevation: f64, distance: f64) -> Vec<u8> {
        let eye = Vec3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        ) * distance;
        let pose = Pose::look_at(eye, Vec3::zeros(), Vec3::z());
        let view = CameraView::new(
            "demo",
            Intrinsics::from_fov(width, height, 50f64.to_radians()),
            pose,
            Grid::filled(width, height, Vec3::zeros()),
        );
        let opts = RenderOptions {
            background: Vec3::new(0.08, 0.09, 0.11),
            keep_fragments: false,
            ..RenderOptions::default()
        };
        to_rgba8(&render(&self.model, &view, &opts).color)
    }
}
