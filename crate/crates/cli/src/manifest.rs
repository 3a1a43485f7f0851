use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    pub output_dir: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<Artifact>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes files into a run directory and records them for the manifest.
pub struct RunDir {
    root: PathBuf,
    started: u64,
    written: Vec<PathBuf>,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(RunDir {
            root,
            started: unix_now(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        if !self.written.contains(&path) {
            self.written.push(path.clone());
        }
        Ok(path)
    }

    pub fn finish(self, config_path: Option<&Path>) -> Result<RunManifest> {
        let mut artifacts = Vec::new();
        for p in &self.written {
            let data = fs::read(p).with_context(|| format!("reading back {}", p.display()))?;
            artifacts.push(Artifact {
                path: p
                    .strip_prefix(&self.root)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/"),
                bytes: data.len() as u64,
                sha256: sha256_hex(&data),
            });
        }
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            tool: "derlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: std::env::args().skip(1).collect(),
            config_path: config_path.map(|p| p.display().to_string()),
            output_dir: self.root.display().to_string(),
            started_unix: self.started,
            finished_unix: unix_now(),
            artifacts,
        };
        let text = toml::to_string(&manifest)?;
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

/// Re-hashes every artifact; returns the paths whose contents changed.
pub fn verify(dir: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .with_context(|| format!("no {MANIFEST_FILE} in {}", dir.display()))?;
    let manifest: RunManifest = toml::from_str(&text)?;
    let mut bad = Vec::new();
    for a in manifest.artifacts {
        match fs::read(dir.join(&a.path)) {
            Ok(data) if sha256_hex(&data) == a.sha256 => {}
            _ => bad.push(a.path),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_and_verifies_files() {
        let tmp = tempfile::tempdir().unwrap();
        let mut dir = RunDir::create(tmp.path().join("run")).unwrap();
        dir.write("a.csv", "x\n1\n").unwrap();
        dir.write("sub/b.txt", "hello").unwrap();
        let m = dir.finish(None).unwrap();
        assert_eq!(m.artifacts.len(), 2);
        assert_eq!(m.artifacts[1].path, "sub/b.txt");
        let root = tmp.path().join("run");
        assert!(verify(&root).unwrap().is_empty());
        fs::write(root.join("a.csv"), "tampered").unwrap();
        assert_eq!(verify(&root).unwrap(), vec!["a.csv".to_string()]);
    }
}
