use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::gateway::{hash_key, GatewayStats};

pub const ARTIFACT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

/// Facts about one execution that legitimately differ between reruns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunInfo {
    pub started_unix: u64,
    pub finished_unix: u64,
    pub tool_version: String,
    pub gateway_stats: BTreeMap<String, GatewayStats>,
}

/// Index of a command's output directory. Two executions with equal
/// `outputs_digest` produced byte-identical artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifact_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub runs: Vec<String>,
    pub outputs: Vec<OutputEntry>,
    pub outputs_digest: String,
    pub run_info: RunInfo,
}

pub fn sha256_file(path: &Path) -> Result<String, ExperimentError> {
    let bytes = std::fs::read(path).map_err(|e| ExperimentError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// Hashes `files` (relative to `dir`) into a manifest.
    pub fn build(
        dir: &Path,
        command: &str,
        config_hash: String,
        seed: u64,
        runs: Vec<String>,
        files: &[String],
        run_info: RunInfo,
    ) -> Result<Self, ExperimentError> {
        let mut outputs = files
            .iter()
            .map(|f| Ok(OutputEntry { path: f.clone(), sha256: sha256_file(&dir.join(f))? }))
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let outputs_digest = digest(&outputs);
        Ok(Self { artifact_version: ARTIFACT_VERSION, command: command.into(), config_hash, seed, runs, outputs, outputs_digest, run_info })
    }

    pub fn save(&self, dir: &Path) -> Result<(), ExperimentError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| ExperimentError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, ExperimentError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::io(&path, e))
    }

    /// Outputs whose current content no longer matches the recorded hash.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        let mut bad = Vec::new();
        for o in &self.outputs {
            match sha256_file(&dir.join(&o.path)) {
                Ok(h) if h == o.sha256 => {}
                Ok(_) => bad.push(format!("{}: content changed", o.path)),
                Err(e) => bad.push(e.to_string()),
            }
        }
        if digest(&self.outputs) != self.outputs_digest {
            bad.push("outputs_digest does not match the listed outputs".into());
        }
        bad
    }
}

fn digest(outputs: &[OutputEntry]) -> String {
    let parts: Vec<&str> = outputs.iter().flat_map(|o| [o.path.as_str(), o.sha256.as_str()]).collect();
    hash_key(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_detects_edits() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "one").unwrap();
        std::fs::write(dir.path().join("b.txt"), "two").unwrap();
        let files = vec!["b.txt".to_string(), "a.txt".to_string()];
        let m = Manifest::build(dir.path(), "evaluate", "cfg".into(), 1, vec![], &files, RunInfo::default()).unwrap();
        assert_eq!(m.outputs[0].path, "a.txt");
        m.save(dir.path()).unwrap();
        let back = Manifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert!(back.verify(dir.path()).is_empty());
        std::fs::write(dir.path().join("a.txt"), "changed").unwrap();
        assert_eq!(back.verify(dir.path()).len(), 1);
    }

    #[test]
    fn digest_ignores_run_info() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "x").unwrap();
        let files = vec!["a.txt".to_string()];
        let a = Manifest::build(dir.path(), "c", "h".into(), 0, vec![], &files, RunInfo::default()).unwrap();
        let info = RunInfo { started_unix: 5, finished_unix: 9, ..RunInfo::default() };
        let b = Manifest::build(dir.path(), "c", "h".into(), 0, vec![], &files, info).unwrap();
        assert_eq!(a.outputs_digest, b.outputs_digest);
    }
}
