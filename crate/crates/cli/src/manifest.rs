use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tsa::Error;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the workdir when the artifact lives under it.
    pub path: String,
    pub command: String,
    /// SHA-256 of the canonical JSON form of the settings that produced it.
    pub config_hash: String,
    pub content_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: Vec<Artifact>,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{:02x}", b)).collect()
}

impl Manifest {
    pub fn load(workdir: &Path) -> Result<Self, Error> {
        let path = workdir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Adds or replaces the entry for `artifact` and rewrites the manifest.
    pub fn record(
        &mut self,
        workdir: &Path,
        artifact: &Path,
        command: &str,
        config: &impl Serialize,
    ) -> Result<(), Error> {
        // serde_json::Value keeps object keys sorted, which makes the hash canonical
        let canonical = serde_json::to_vec(&serde_json::to_value(config)?)?;
        let rel: PathBuf = artifact.strip_prefix(workdir).unwrap_or(artifact).to_path_buf();
        let entry = Artifact {
            path: rel.to_string_lossy().into_owned(),
            command: command.to_string(),
            config_hash: hex_digest(&canonical),
            content_hash: hex_digest(&fs::read(artifact)?),
        };
        match self.artifacts.iter_mut().find(|a| a.path == entry.path) {
            Some(a) => *a = entry,
            None => self.artifacts.push(entry),
        }
        fs::write(workdir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
