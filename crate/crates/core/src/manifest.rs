//! Run manifests: which files each pipeline stage read and wrote, with content hashes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::TOOLKIT_VERSION;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the manifest's directory when the file lives below it.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub inputs: Vec<FileHash>,
    /// SHA-256 over the input hashes, in order.
    pub input_hash: String,
    pub outputs: Vec<FileHash>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    pub config_paths: Vec<String>,
    pub seeds: Vec<u64>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(command: &str, config_paths: Vec<String>, seeds: Vec<u64>) -> Self {
        Self {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            command: command.to_string(),
            config_paths,
            seeds,
            stages: Vec::new(),
        }
    }

    fn hash_files(base: &Path, files: &[PathBuf]) -> Result<Vec<FileHash>> {
        files
            .iter()
            .map(|f| {
                let path = f.strip_prefix(base).unwrap_or(f).to_string_lossy().replace('\\', "/");
                Ok(FileHash {
                    path,
                    sha256: file_sha256(f)?,
                })
            })
            .collect()
    }

    /// Records a stage; paths below `base` are stored relative to it.
    pub fn add_stage(&mut self, stage: &str, base: &Path, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
        let inputs = Self::hash_files(base, inputs)?;
        let joined: String = inputs.iter().map(|h| h.sha256.as_str()).collect::<Vec<_>>().join("\n");
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            input_hash: sha256_hex(joined.as_bytes()),
            inputs,
            outputs: Self::hash_files(base, outputs)?,
        });
        Ok(())
    }

    pub fn outputs(&self) -> impl Iterator<Item = &FileHash> {
        self.stages.iter().flat_map(|s| s.outputs.iter())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_string_pretty(self).expect("manifest serializes");
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_hashes_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        fs::write(&a, "abc").unwrap();
        fs::write(&b, "def").unwrap();
        let mut m = RunManifest::new("ingest", vec!["configs/x.toml".into()], vec![7]);
        m.add_stage("ingest", dir.path(), std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        let s = &m.stages[0];
        assert_eq!(s.inputs[0].path, "a.txt");
        assert_eq!(s.inputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(s.input_hash, sha256_hex(s.inputs[0].sha256.as_bytes()));
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
        assert!(m.add_stage("x", dir.path(), &[dir.path().join("missing")], &[]).is_err());
    }
}
