//! Run manifests: what a run wrote, with content hashes.
//!
//! Hashes follow git's object convention, applied with SHA-256:
//! `sha256("blob <len>\0" + content)`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vaerobust::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Path relative to the run directory.
    pub path: String,
    pub bytes: u64,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<ArtifactEntry>,
    /// Wall-clock seconds per stage, in execution order.
    pub timing: Vec<(String, f64)>,
}

pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn new(command: &str, config_text: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: blob_hash(config_text.as_bytes()),
            seed,
            artifacts: Vec::new(),
            timing: Vec::new(),
        }
    }

    /// Writes `content` under `dir` and records it.
    pub fn write_artifact(&mut self, dir: &Path, name: &str, content: &[u8]) -> Result<()> {
        std::fs::write(dir.join(name), content)?;
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(ArtifactEntry {
            path: name.to_string(),
            bytes: content.len() as u64,
            hash: blob_hash(content),
        });
        Ok(())
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        self.timing.push((stage.to_string(), seconds));
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }
}

/// Checks that every file in `dir` is listed with a matching hash and every
/// listed file exists.
pub fn verify_dir(dir: &Path) -> Result<()> {
    let m = RunManifest::load(dir)?;
    let listed: BTreeSet<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name != MANIFEST_FILE && !listed.contains(name.as_str()) {
            return Err(Error::Config(format!("orphan file {name:?} is not in the manifest")));
        }
    }
    for a in &m.artifacts {
        let content = std::fs::read(dir.join(&a.path))?;
        if blob_hash(&content) != a.hash {
            return Err(Error::Config(format!("{} does not match its manifest hash", a.path)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_convention_shape() {
        assert_eq!(blob_hash(b"").len(), 64);
        assert_ne!(blob_hash(b"a"), blob_hash(b"b"));
        assert_eq!(blob_hash(b"abc"), blob_hash(b"abc"));
    }

    #[test]
    fn verify_catches_orphans_and_edits() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("test", "seed = 1", 1);
        m.write_artifact(dir.path(), "a.csv", b"x\n1\n").unwrap();
        m.save(dir.path()).unwrap();
        verify_dir(dir.path()).unwrap();

        std::fs::write(dir.path().join("stray.csv"), "y").unwrap();
        assert!(verify_dir(dir.path()).unwrap_err().to_string().contains("stray.csv"));
        std::fs::remove_file(dir.path().join("stray.csv")).unwrap();

        std::fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        assert!(verify_dir(dir.path()).is_err());
    }
}
