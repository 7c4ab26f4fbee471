//! Checkpoints: a JSON manifest plus one DBAG blob (FBAG layout, 64-bit
//! elements) per tensor, so reloading is bit-exact.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::bagdata::{load_matrix, save_matrix_f64};
use crate::error::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    pub epoch: usize,
    /// Validation C-index at save time, if evaluated.
    pub c_index: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    meta: CheckpointMeta,
    config: ModelConfig,
    n_params: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

pub fn save_checkpoint(dir: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    let tdir = dir.join("tensors");
    fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
    let mut entries = Vec::new();
    for t in params.tensors() {
        let file = format!("tensors/{}.dbag", t.name);
        let cols = *t.shape.last().expect("tensor has a shape");
        let matrix = Array2::from_shape_vec((t.data.len() / cols, cols), t.data.to_vec())
            .map_err(|e| Error::Shape(e.to_string()))?;
        save_matrix_f64(&matrix, &dir.join(&file))?;
        entries.push(TensorEntry {
            name: t.name,
            shape: t.shape,
            file,
        });
    }
    let manifest = Manifest {
        meta: meta.clone(),
        config: params.config(),
        n_params: params.n_params(),
        tensors: entries,
    };
    let path = dir.join(CHECKPOINT_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut params = ModelParams::init(&manifest.config, 0)?;
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, model has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut blobs = Vec::with_capacity(expected.len());
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Format(format!(
                "tensor {} {:?} does not match model tensor {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let m = load_matrix(&dir.join(&entry.file))?;
        if m.len() != shape.iter().product::<usize>() {
            return Err(Error::Format(format!("blob for {name} has {} values", m.len())));
        }
        blobs.push(m.into_raw_vec_and_offset().0);
    }
    let mut k = 0;
    params.visit_mut(|_, t| {
        t.copy_from_slice(&blobs[k]);
        k += 1;
    });
    Ok(Checkpoint {
        meta: manifest.meta,
        params,
    })
}
