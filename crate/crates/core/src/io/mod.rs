//! File formats: PLY point clouds and surfel models, view directories
//! (PNG/PFM maps plus `cameras.json`), and flat config files.

pub mod image;
pub mod obj;
pub mod ply;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::median;
use crate::knn::KnnIndex;
use crate::types::{
    parse_key_values, CameraView, Grid, Intrinsics, Mat3, PipelineConfig, PointCloud, PointSource, Pose,
    ScanPoint, Surfel, SurfelModel, Validate, Vec3,
};
use ply::{PlyData, PlyFormat, PlyWriter, PropertyKind, ScalarType};

pub use ply::PlyHeaderInfo;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineConfig::from_text(&text)
}

/// Median distance from each point to its nearest other point.
pub fn median_nn_distance(positions: &[Vec3]) -> Option<f64> {
    if positions.len() < 2 {
        return None;
    }
    let index = KnnIndex::new(positions).ok()?;
    let mut d = crate::parallel::map_indices(positions.len(), |i| {
        index.knn(&positions[i], 1, Some(i)).first().map_or(f64::INFINITY, |n| n.distance)
    });
    median(&mut d)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

fn sidecar_delta(path: &Path) -> Result<Option<f64>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    for (k, v) in parse_key_values(&text)? {
        if k == "delta" {
            return v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Config(format!("{}: invalid delta `{v}`", side.display())));
        }
    }
    Ok(None)
}

fn vertex_columns<'a>(ply: &'a PlyData, names: &[&str]) -> Result<Vec<&'a [f64]>> {
    let el = ply
        .header
        .element("vertex")
        .ok_or_else(|| Error::parse(0, "no `vertex` element"))?;
    let data = &ply.elements["vertex"];
    names
        .iter()
        .map(|n| {
            el.properties
                .iter()
                .find(|p| p.name == *n && matches!(p.kind, PropertyKind::Scalar(_)))
                .ok_or_else(|| Error::parse(0, format!("vertex property `{n}` missing")))?;
            Ok(data.column(n).expect("declared column"))
        })
        .collect()
}

fn check_xyz_float(header: &PlyHeaderInfo) -> Result<()> {
    let el = header
        .element("vertex")
        .ok_or_else(|| Error::parse(0, "no `vertex` element"))?;
    for axis in ["x", "y", "z"] {
        match el.properties.iter().find(|p| p.name == axis).map(|p| &p.kind) {
            Some(PropertyKind::Scalar(t)) if t.is_float() => {}
            Some(_) => return Err(Error::parse(0, format!("vertex `{axis}` must be float or double"))),
            None => return Err(Error::parse(0, format!("vertex property `{axis}` missing"))),
        }
    }
    Ok(())
}

pub fn parse_point_cloud(bytes: &[u8], delta_override: Option<f64>) -> Result<PointCloud> {
    let ply = ply::parse_ply(bytes)?;
    check_xyz_float(&ply.header)?;
    let cols = vertex_columns(&ply, &["x", "y", "z"])?;
    let data = &ply.elements["vertex"];
    let amb = data.column("ambiguity");
    let high = data.column("high_ambiguity");
    let source = data.column("source");
    let mut points = Vec::with_capacity(data.count);
    for i in 0..data.count {
        let src = match source {
            Some(s) => PointSource::from_code(s[i] as u8)
                .ok_or_else(|| Error::Input(format!("point {i}: unknown source code {}", s[i])))?,
            None => PointSource::Lidar,
        };
        points.push(ScanPoint {
            position: Vec3::new(cols[0][i], cols[1][i], cols[2][i]),
            ambiguity: amb.map_or(0.0, |a| a[i]),
            high_ambiguity: high.is_some_and(|h| h[i] != 0.0),
            source: src,
        });
    }
    let delta = match delta_override {
        Some(d) => d,
        None => match ply.header.comment_value("delta") {
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| Error::parse(0, format!("invalid delta comment `{v}`")))?,
            None => {
                let pos: Vec<Vec3> = points.iter().map(|p| p.position).collect();
                if pos.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
                    f64::NAN
                } else {
                    median_nn_distance(&pos).unwrap_or(f64::NAN)
                }
            }
        },
    };
    let cloud = PointCloud::new(points, delta);
    cloud.validate()?;
    Ok(cloud)
}

/// Reads a PLY point cloud. `delta` comes from a `<path>.cfg` sidecar, then a
/// `comment delta` header line, then the median nearest-neighbour distance.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = read_bytes(path)?;
    let side = sidecar_delta(path)?;
    parse_point_cloud(&bytes, side)
}

pub fn point_cloud_bytes(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let n = cloud.len();
    let col = |f: &dyn Fn(&ScanPoint) -> f64| cloud.points.iter().map(f).collect::<Vec<f64>>();
    let mut w = PlyWriter::new(format, n);
    w.comment(format!("delta {}", cloud.delta))
        .property("x", ScalarType::F64, col(&|p| p.position.x))
        .property("y", ScalarType::F64, col(&|p| p.position.y))
        .property("z", ScalarType::F64, col(&|p| p.position.z))
        .property("ambiguity", ScalarType::F64, col(&|p| p.ambiguity))
        .property("high_ambiguity", ScalarType::U8, col(&|p| f64::from(u8::from(p.high_ambiguity))))
        .property("source", ScalarType::U8, col(&|p| f64::from(p.source.code())));
    w.to_bytes()
}

pub fn write_point_cloud(cloud: &PointCloud, path: &Path, format: PlyFormat) -> Result<()> {
    cloud.validate()?;
    write_bytes(path, &point_cloud_bytes(cloud, format))
}

const SURFEL_F64: [&str; 17] = [
    "x", "y", "z", "tu_x", "tu_y", "tu_z", "tv_x", "tv_y", "tv_z", "su", "sv", "opacity", "r", "g", "b", "ambiguity",
    "grad_stat",
];

pub fn surfel_model_bytes(model: &SurfelModel, format: PlyFormat) -> Vec<u8> {
    let s = &model.surfels;
    let mut w = PlyWriter::new(format, s.len());
    let getters: [fn(&Surfel) -> f64; 17] = [
        |s| s.center.x,
        |s| s.center.y,
        |s| s.center.z,
        |s| s.tangent_u.x,
        |s| s.tangent_u.y,
        |s| s.tangent_u.z,
        |s| s.tangent_v.x,
        |s| s.tangent_v.y,
        |s| s.tangent_v.z,
        |s| s.scale_u,
        |s| s.scale_v,
        |s| s.opacity,
        |s| s.color.x,
        |s| s.color.y,
        |s| s.color.z,
        |s| s.ambiguity,
        |s| s.grad_stat,
    ];
    for (name, get) in SURFEL_F64.iter().zip(getters) {
        w.property(name, ScalarType::F64, s.iter().map(get).collect());
    }
    w.property("view_count", ScalarType::U32, s.iter().map(|s| f64::from(s.view_count)).collect());
    w.property(
        "was_densified",
        ScalarType::U8,
        s.iter().map(|s| f64::from(u8::from(s.was_densified))).collect(),
    );
    w.to_bytes()
}

pub fn parse_surfel_model(bytes: &[u8]) -> Result<SurfelModel> {
    let ply = ply::parse_ply(bytes)?;
    check_xyz_float(&ply.header)?;
    let c = vertex_columns(&ply, &SURFEL_F64)?;
    let data = &ply.elements["vertex"];
    let views = data.column("view_count");
    let dens = data.column("was_densified");
    let surfels = (0..data.count)
        .map(|i| Surfel {
            center: Vec3::new(c[0][i], c[1][i], c[2][i]),
            tangent_u: Vec3::new(c[3][i], c[4][i], c[5][i]),
            tangent_v: Vec3::new(c[6][i], c[7][i], c[8][i]),
            scale_u: c[9][i],
            scale_v: c[10][i],
            opacity: c[11][i],
            color: Vec3::new(c[12][i], c[13][i], c[14][i]),
            ambiguity: c[15][i],
            grad_stat: c[16][i],
            view_count: views.map_or(0, |v| v[i] as u32),
            was_densified: dens.is_some_and(|d| d[i] != 0.0),
        })
        .collect();
    let model = SurfelModel::new(surfels);
    model.validate()?;
    Ok(model)
}

pub fn read_surfel_model(path: &Path) -> Result<SurfelModel> {
    parse_surfel_model(&read_bytes(path)?)
}

pub fn write_surfel_model(model: &SurfelModel, path: &Path) -> Result<()> {
    write_bytes(path, &surfel_model_bytes(model, PlyFormat::BinaryLittleEndian))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CameraRecord {
    id: String,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// World-to-camera rotation, row-major.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    #[serde(default = "one")]
    sampling_weight: f64,
}

fn one() -> f64 {
    1.0
}

impl CameraRecord {
    fn from_view(v: &CameraView) -> Self {
        let r = v.pose.rotation;
        Self {
            id: v.id.clone(),
            width: v.intrinsics.width,
            height: v.intrinsics.height,
            fx: v.intrinsics.fx,
            fy: v.intrinsics.fy,
            cx: v.intrinsics.cx,
            cy: v.intrinsics.cy,
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [v.pose.translation.x, v.pose.translation.y, v.pose.translation.z],
            sampling_weight: v.sampling_weight,
        }
    }

    fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    fn pose(&self) -> Pose {
        let r = self.rotation;
        Pose {
            rotation: Mat3::new(r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]),
            translation: Vec3::from(self.translation),
        }
    }
}

fn view_file(dir: &Path, id: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{id}{suffix}"))
}

/// Loads the precomputed normal map (`{id}_normal.pfm` or `{id}_normal.png`)
/// and angular-error map (`{id}_angerr.pfm`, radians) of one view.
/// Both are checked against the dimensions of `{id}.png`.
pub fn read_maps(dir: &Path, view_id: &str) -> Result<(Option<Grid<Vec3>>, Option<Grid<f64>>)> {
    let rgb = image::decode_png(&read_bytes(&view_file(dir, view_id, ".png"))?)?;
    let (w, h) = (rgb.width, rgb.height);

    let pfm = view_file(dir, view_id, "_normal.pfm");
    let png = view_file(dir, view_id, "_normal.png");
    let normals = if pfm.exists() {
        let r = image::decode_pfm(&read_bytes(&pfm)?)?;
        if r.channels != 3 {
            return Err(Error::Image(format!("{}: normal map needs 3 channels", pfm.display())));
        }
        Some(r.to_rgb().map(image::renormalize))
    } else if png.exists() {
        Some(image::decode_normals(&image::decode_png(&read_bytes(&png)?)?)?)
    } else {
        None
    };

    let ae = view_file(dir, view_id, "_angerr.pfm");
    let angerr = if ae.exists() {
        Some(image::decode_pfm(&read_bytes(&ae)?)?.to_scalar())
    } else {
        None
    };

    let mut problems = Vec::new();
    if let Some(n) = &normals {
        if (n.width, n.height) != (w, h) {
            problems.push(format!("view {view_id}: normal map is {}x{}, image is {w}x{h}", n.width, n.height));
        }
    }
    if let Some(a) = &angerr {
        if (a.width, a.height) != (w, h) {
            problems.push(format!("view {view_id}: angular error map is {}x{}, image is {w}x{h}", a.width, a.height));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    Ok((normals, angerr))
}

/// Writes every view of a dataset directory.
pub fn write_views(dir: &Path, views: &[CameraView]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_cameras(dir, views)?;
    for v in views {
        write_bytes(&view_file(dir, &v.id, ".png"), &image::encode_rgb8(&v.image)?)?;
        if let Some(n) = &v.normal_map {
            write_bytes(&view_file(dir, &v.id, "_normal.pfm"), &image::encode_pfm_rgb(n)?)?;
        }
        if let Some(a) = &v.angular_error_map {
            write_bytes(&view_file(dir, &v.id, "_angerr.pfm"), &image::encode_pfm_scalar(a)?)?;
        }
        write_view_masks(dir, v)?;
    }
    Ok(())
}

/// Writes only the derived per-view maps (uncertainty and mask) and the
/// camera list with updated sampling weights.
pub fn write_view_masks(dir: &Path, view: &CameraView) -> Result<()> {
    write_bytes(&view_file(dir, &view.id, "_uncertainty.pfm"), &image::encode_pfm_scalar(&view.uncertainty)?)?;
    write_bytes(&view_file(dir, &view.id, "_mask.png"), &image::encode_mask(&view.mask)?)
}

pub fn write_cameras(dir: &Path, views: &[CameraView]) -> Result<()> {
    let records: Vec<CameraRecord> = views.iter().map(CameraRecord::from_view).collect();
    write_bytes(&dir.join("cameras.json"), serde_json::to_string_pretty(&records)?.as_bytes())
}

pub fn read_views(dir: &Path) -> Result<Vec<CameraView>> {
    let cams = dir.join("cameras.json");
    let records: Vec<CameraRecord> = serde_json::from_slice(&read_bytes(&cams)?)?;
    let mut views = Vec::with_capacity(records.len());
    for rec in records {
        let image = image::decode_png(&read_bytes(&view_file(dir, &rec.id, ".png"))?)?.to_rgb();
        let mut view = CameraView::new(rec.id.clone(), rec.intrinsics(), rec.pose(), image);
        view.sampling_weight = rec.sampling_weight;
        let (normals, angerr) = read_maps(dir, &rec.id)?;
        view.normal_map = normals;
        view.angular_error_map = angerr;
        let up = view_file(dir, &rec.id, "_uncertainty.pfm");
        if up.exists() {
            view.uncertainty = image::decode_pfm(&read_bytes(&up)?)?.to_scalar();
        }
        let mp = view_file(dir, &rec.id, "_mask.png");
        if mp.exists() {
            view.mask = image::decode_mask(&read_bytes(&mp)?)?;
        }
        view.validate()?;
        views.push(view);
    }
    Ok(views)
}
