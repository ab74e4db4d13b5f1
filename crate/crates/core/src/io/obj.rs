//! Wavefront OBJ subset: `v`, `f` (polygons fan-triangulated, `v/vt/vn`
//! forms, negative indices), `usemtl`, `mtllib`. From MTL files only
//! `newmtl`, `Kd`, `albedo` and `illum` are read.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lidar_sim::{SceneTriangleSet, Triangle};
use crate::types::{Validate, Vec3};

/// Surface properties the simulator uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub albedo: f64,
    /// Mirror-like surfaces return nothing.
    pub reflective: bool,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            albedo: 1.0,
            reflective: false,
        }
    }
}

fn floats<const N: usize>(fields: &[&str], offset: usize, what: &str) -> Result<[f64; N]> {
    if fields.len() < N {
        return Err(Error::parse(offset, format!("`{what}` needs {N} numbers")));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f
            .parse()
            .map_err(|_| Error::parse(offset, format!("`{what}`: invalid number `{f}`")))?;
    }
    Ok(out)
}

/// Parses MTL text into named materials. `illum` 3 to 7 marks a surface as
/// reflective.
pub fn parse_mtl(text: &str) -> Result<HashMap<String, Material>> {
    let mut out = HashMap::new();
    let mut current: Option<String> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let content = line.split('#').next().unwrap_or("").trim();
        let fields: Vec<&str> = content.split_whitespace().collect();
        if let Some((&key, rest)) = fields.split_first() {
            if key == "newmtl" {
                let name = rest.join(" ");
                out.insert(name.clone(), Material::default());
                current = Some(name);
            } else if let Some(m) = current.as_ref().and_then(|n| out.get_mut(n)) {
                match key {
                    "Kd" => {
                        let kd: [f64; 3] = floats(rest, offset, "Kd")?;
                        m.albedo = (kd[0] + kd[1] + kd[2]) / 3.0;
                    }
                    "albedo" => m.albedo = floats::<1>(rest, offset, "albedo")?[0],
                    "illum" => {
                        let n = floats::<1>(rest, offset, "illum")?[0];
                        m.reflective = (3.0..=7.0).contains(&n);
                    }
                    _ => {}
                }
            }
        }
        offset += line.len();
    }
    Ok(out)
}

fn vertex_index(token: &str, count: usize, offset: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let i: i64 = head
        .parse()
        .map_err(|_| Error::parse(offset, format!("invalid face index `{token}`")))?;
    let idx = if i > 0 { i - 1 } else { count as i64 + i };
    if i == 0 || idx < 0 || idx as usize >= count {
        return Err(Error::parse(offset, format!("face index {i} out of range (have {count} vertices)")));
    }
    Ok(idx as usize)
}

/// Parses OBJ text. `load_mtl` returns the text of a referenced MTL file.
pub fn parse_obj(text: &str, mut load_mtl: impl FnMut(&str) -> Result<String>) -> Result<SceneTriangleSet> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut materials: HashMap<String, Material> = HashMap::new();
    let mut current = Material::default();
    let mut triangles = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let content = line.split('#').next().unwrap_or("").trim();
        let fields: Vec<&str> = content.split_whitespace().collect();
        if let Some((&key, rest)) = fields.split_first() {
            match key {
                "v" => {
                    let [x, y, z] = floats(rest, offset, "v")?;
                    vertices.push(Vec3::new(x, y, z));
                }
                "f" => {
                    if rest.len() < 3 {
                        return Err(Error::parse(offset, "face needs at least 3 vertices"));
                    }
                    let idx: Vec<usize> = rest
                        .iter()
                        .map(|t| vertex_index(t, vertices.len(), offset))
                        .collect::<Result<_>>()?;
                    for j in 1..idx.len() - 1 {
                        triangles.push(Triangle {
                            vertices: [vertices[idx[0]], vertices[idx[j]], vertices[idx[j + 1]]],
                            albedo: current.albedo,
                            reflective: current.reflective,
                        });
                    }
                }
                "mtllib" => {
                    for name in rest {
                        materials.extend(parse_mtl(&load_mtl(name)?)?);
                    }
                }
                "usemtl" => {
                    let name = rest.join(" ");
                    current = *materials
                        .get(&name)
                        .ok_or_else(|| Error::parse(offset, format!("unknown material `{name}`")))?;
                }
                _ => {}
            }
        }
        offset += line.len();
    }
    let scene = SceneTriangleSet { triangles };
    scene.validate()?;
    Ok(scene)
}

/// Reads an OBJ file; `mtllib` paths are resolved against its directory.
pub fn read_obj(path: &Path) -> Result<SceneTriangleSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_obj(&text, |name| {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MTL: &str = "newmtl dark\nKd 0.1 0.1 0.1\nnewmtl mirror\nillum 3\n";

    #[test]
    fn quad_with_materials() {
        let obj = "mtllib m.mtl\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nusemtl dark\nf 1/1/1 2/2/2 3/3/3 4/4/4\nusemtl mirror\nf -4 -3 -2\n";
        let s = parse_obj(obj, |n| {
            assert_eq!(n, "m.mtl");
            Ok(MTL.to_string())
        })
        .unwrap();
        assert_eq!(s.triangles.len(), 3);
        assert!((s.triangles[0].albedo - 0.1).abs() < 1e-12);
        assert!(!s.triangles[1].reflective);
        assert!(s.triangles[2].reflective);
        assert_eq!(s.triangles[2].vertices[2], Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse_obj("v 0 0 0\nf 1 2 3\n", |_| Ok(String::new())).unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 8, .. }), "{e}");
        assert!(parse_obj("usemtl nope\n", |_| Ok(String::new())).is_err());
        let degenerate = parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n", |_| Ok(String::new()));
        assert!(matches!(degenerate, Err(Error::Validation(_))));
    }
}
