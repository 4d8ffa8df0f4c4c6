use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Run record written next to every run's primary output.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub global_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub created_at: u64,
}

/// Hex SHA-256 of a file, or of the sorted `(relative path, hash)` list of a
/// directory.
pub fn hash_path(path: &Path) -> anyhow::Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update(hash_path(&path.join(&rel))?.as_bytes());
            hasher.update(b"\n");
        }
    } else {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

pub fn config_hash(config: &PipelineConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}

pub struct ManifestBuilder {
    command: String,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.inputs.push(path.into());
        self
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) -> &mut Self {
        self.outputs.push(path.into());
        self
    }

    pub fn write(&self, config: &PipelineConfig, dest: &Path) -> anyhow::Result<()> {
        let artifacts = |paths: &[PathBuf]| -> anyhow::Result<Vec<Artifact>> {
            paths
                .iter()
                .map(|p| {
                    Ok(Artifact {
                        path: p.display().to_string(),
                        sha256: hash_path(p)?,
                    })
                })
                .collect()
        };
        let manifest = Manifest {
            tool: "logenc",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command.clone(),
            config_hash: config_hash(config),
            global_seed: config.seed,
            seeds: self.seeds.clone(),
            inputs: artifacts(&self.inputs)?,
            outputs: artifacts(&self.outputs)?,
            created_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        logenc_core::io::write_json(dest, &manifest).context("writing manifest")?;
        log::info!("manifest written to {}", dest.display());
        Ok(())
    }
}

/// `<path>.manifest.json`, next to the primary output.
pub fn sibling_manifest(primary: &Path) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_directory_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, b"abc").unwrap();
        assert_eq!(
            hash_path(&f).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let before = hash_path(dir.path()).unwrap();
        std::fs::write(dir.path().join("b.txt"), b"x").unwrap();
        assert_ne!(before, hash_path(dir.path()).unwrap());
        assert_eq!(sibling_manifest(Path::new("out/x.json")), PathBuf::from("out/x.json.manifest.json"));
    }
}
