//! On-disk checkpoint archives.
//!
//! One directory per model:
//!
//! ```text
//! <dir>/manifest.json        architecture, tensor list, provenance
//! <dir>/tensors/<name>.bin   little-endian f32, row-major
//! ```
//!
//! Saving and loading round-trips every parameter bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Architecture, Backbone, ParamSet};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
const TENSOR_DIR: &str = "tensors";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub id: String,
    pub architecture_id: String,
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
    /// Mean angular error (degrees) on the source validation split.
    pub source_val_error: Option<f64>,
    pub seed: u64,
}

/// A model's parameters plus the metadata needed to rebuild it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub id: String,
    pub architecture: Architecture,
    pub params: ParamSet,
    pub source_val_error: Option<f64>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn from_model(id: impl Into<String>, model: &dyn Backbone, seed: u64) -> Self {
        Checkpoint {
            id: id.into(),
            architecture: model.architecture().clone(),
            params: model.params().clone(),
            source_val_error: None,
            seed,
        }
    }

    /// Builds a backbone of the recorded architecture holding these weights.
    pub fn instantiate(&self) -> Result<Box<dyn Backbone>> {
        let mut model = self.architecture.build(self.seed);
        model.params_mut().assign_by_name(&self.params)?;
        Ok(model)
    }
}

fn tensor_file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{TENSOR_DIR}/{safe}.bin")
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir.join(TENSOR_DIR)).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::with_capacity(ckpt.params.len());
    for (name, t) in ckpt.params.iter() {
        let file = tensor_file_name(name);
        let mut bytes = Vec::with_capacity(4 * t.numel());
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32le".into(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        id: ckpt.id.clone(),
        architecture_id: ckpt.architecture.id().to_string(),
        architecture: ckpt.architecture.clone(),
        tensors,
        source_val_error: ckpt.source_val_error,
        seed: ckpt.seed,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::CheckpointIncompatible(format!(
            "{}: unsupported format version {}",
            path.display(),
            manifest.format_version
        )));
    }
    if manifest.architecture_id != manifest.architecture.id() {
        return Err(Error::CheckpointIncompatible(format!(
            "{}: architecture id `{}` does not match architecture `{}`",
            path.display(),
            manifest.architecture_id,
            manifest.architecture.id()
        )));
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let mut params = ParamSet::new();
    for entry in &manifest.tensors {
        if entry.dtype != "f32le" {
            return Err(Error::CheckpointIncompatible(format!(
                "tensor `{}` has unsupported dtype `{}`",
                entry.name, entry.dtype
            )));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let n: usize = entry.shape.iter().product();
        if bytes.len() != 4 * n {
            return Err(Error::CheckpointIncompatible(format!(
                "tensor `{}`: {} bytes for shape {:?}",
                entry.name,
                bytes.len(),
                entry.shape
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(entry.name.clone(), Tensor::from_vec(&entry.shape, data)?);
    }
    Ok(Checkpoint {
        id: manifest.id,
        architecture: manifest.architecture,
        params,
        source_val_error: manifest.source_val_error,
        seed: manifest.seed,
    })
}

/// Subdirectories of `root` that contain a checkpoint manifest, sorted.
pub fn list_checkpoints(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
