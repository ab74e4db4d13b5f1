//! Stage manifests: content hashes of inputs and outputs, the config hash and
//! the seed, used to skip stages whose inputs have not changed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_bytes, write_bytes};

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            files_under(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// SHA-256 of a file, or of a directory's relative paths and file contents in
/// sorted order. Missing paths hash to `None`.
pub fn hash_path(path: &Path) -> Result<Option<String>> {
    if !path.exists() {
        return Ok(None);
    }
    if !path.is_dir() {
        return Ok(Some(hash_bytes(&read_bytes(path)?)));
    }
    let mut files = Vec::new();
    files_under(path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(path).unwrap_or(&f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(Sha256::digest(read_bytes(&f)?));
    }
    Ok(Some(hex(&h.finalize())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
}

fn hash_all(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        let h = hash_path(p)?.ok_or_else(|| Error::Input(format!("missing {}", p.display())))?;
        out.insert(p.to_string_lossy().into_owned(), h);
    }
    Ok(out)
}

impl Manifest {
    pub fn new(stage: &str, config_hash: &str, seed: u64, inputs: &[PathBuf]) -> Result<Self> {
        Ok(Self {
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            inputs: hash_all(inputs)?,
            outputs: BTreeMap::new(),
            seconds: 0.0,
        })
    }

    pub fn record_outputs(&mut self, outputs: &[PathBuf]) -> Result<()> {
        self.outputs = hash_all(outputs)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Option<Self>> {
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&read_bytes(path)?)?))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_bytes(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Whether `previous` already covers this run: same config, seed and
    /// input hashes, and every recorded output still has its recorded hash.
    pub fn satisfied_by(&self, previous: &Manifest) -> Result<bool> {
        if previous.stage != self.stage
            || previous.config_hash != self.config_hash
            || previous.seed != self.seed
            || previous.inputs != self.inputs
            || previous.outputs.is_empty()
        {
            return Ok(false);
        }
        for (p, h) in &previous.outputs {
            if hash_path(Path::new(p))?.as_deref() != Some(h.as_str()) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
