//! Checkpoint directory: `manifest.json` plus one little-endian `f32` file
//! per tensor under `tensors/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{round_f32, EncoderConfig, EncoderError, EncoderModel};
use crate::io::{self, IoError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: EncoderConfig,
    pub seed: u64,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    /// Additional state stored alongside the model (optimizer moments).
    #[serde(default)]
    pub extra_tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub step: u64,
    /// Named flat tensors, e.g. optimizer moments laid out like the model.
    pub extra: Vec<(String, Vec<f64>)>,
    pub metadata: serde_json::Value,
}

fn io_err(path: &Path, source: std::io::Error) -> EncoderError {
    EncoderError::Io(IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn encode_f32(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes
}

fn decode_f32(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect()
}

fn file_name(prefix: &str, index: usize, name: &str) -> String {
    format!("tensors/{prefix}{index:04}_{name}.bin")
}

/// Write a checkpoint directory. Values are stored as `f32`; anything not
/// exactly representable is rounded.
pub fn save_checkpoint(dir: &Path, checkpoint: &Checkpoint) -> Result<(), EncoderError> {
    let model = &checkpoint.model;
    let staging = staging_dir(dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| io_err(&staging, e))?;
    }
    fs::create_dir_all(staging.join("tensors")).map_err(|e| io_err(&staging, e))?;

    let mut tensors = Vec::new();
    for (i, spec) in model.layout.specs.iter().enumerate() {
        let file = file_name("", i, &spec.name);
        let path = staging.join(&file);
        fs::write(&path, encode_f32(&model.params[spec.range()])).map_err(|e| io_err(&path, e))?;
        tensors.push(TensorEntry {
            name: spec.name.clone(),
            shape: spec.shape.clone(),
            dtype: "f32".into(),
            file,
        });
    }
    let mut extra_tensors = Vec::new();
    for (i, (name, values)) in checkpoint.extra.iter().enumerate() {
        let file = file_name("extra_", i, name);
        let path = staging.join(&file);
        fs::write(&path, encode_f32(values)).map_err(|e| io_err(&path, e))?;
        extra_tensors.push(TensorEntry {
            name: name.clone(),
            shape: vec![values.len()],
            dtype: "f32".into(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        seed: model.seed,
        step: checkpoint.step,
        tensors,
        extra_tensors,
        metadata: checkpoint.metadata.clone(),
    };
    io::write_json(&staging.join("manifest.json"), &manifest)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| io_err(dir, e))
}

fn staging_dir(dir: &Path) -> PathBuf {
    let mut name = dir.as_os_str().to_owned();
    name.push(".partial");
    PathBuf::from(name)
}

fn read_tensor(dir: &Path, entry: &TensorEntry) -> Result<Vec<f64>, EncoderError> {
    if entry.dtype != "f32" {
        return Err(EncoderError::Checkpoint(format!("unsupported dtype {}", entry.dtype)));
    }
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let expected: usize = entry.shape.iter().product();
    if bytes.len() != expected * 4 {
        return Err(EncoderError::Checkpoint(format!(
            "{}: expected {} bytes, found {}",
            entry.name,
            expected * 4,
            bytes.len()
        )));
    }
    Ok(decode_f32(&bytes))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, EncoderError> {
    let manifest: CheckpointManifest = io::read_json(&dir.join("manifest.json"))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(EncoderError::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let layout = super::ParamLayout::new(&manifest.config);
    if manifest.tensors.len() != layout.specs.len() {
        return Err(EncoderError::Checkpoint("tensor list does not match config".into()));
    }
    let mut params = vec![0.0; layout.total];
    for (entry, spec) in manifest.tensors.iter().zip(&layout.specs) {
        if entry.name != spec.name || entry.shape != spec.shape {
            return Err(EncoderError::Checkpoint(format!("unexpected tensor {}", entry.name)));
        }
        params[spec.range()].copy_from_slice(&read_tensor(dir, entry)?);
    }
    let model = EncoderModel::from_params(manifest.config.clone(), params, manifest.seed)?;
    let extra = manifest
        .extra_tensors
        .iter()
        .map(|e| Ok((e.name.clone(), read_tensor(dir, e)?)))
        .collect::<Result<Vec<_>, EncoderError>>()?;
    Ok(Checkpoint {
        model,
        step: manifest.step,
        extra,
        metadata: manifest.metadata,
    })
}

impl EncoderModel {
    /// Round every parameter to the nearest `f32`.
    pub fn round_params(&mut self) {
        for p in &mut self.params {
            *p = round_f32(*p);
        }
    }
}
