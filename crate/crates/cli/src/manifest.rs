use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, Context};

pub const TOOL: &str = "emucascade";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = File::open(path).at(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).at(path)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub seconds: f64,
}

/// Provenance of one command run: the effective configuration hash and,
/// per stage, the digests of every file read and written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub stages: Vec<StageRecord>,
    #[serde(skip)]
    root: PathBuf,
}

impl RunManifest {
    /// Paths are recorded relative to `root` when they lie below it.
    pub fn new(command: &str, config_json: &str, root: &Path) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config_sha256: sha256_bytes(config_json.as_bytes()),
            stages: Vec::new(),
            root: root.to_path_buf(),
        }
    }

    fn digest(&self, path: &Path) -> CliResult<FileDigest> {
        let shown = path.strip_prefix(&self.root).unwrap_or(path);
        Ok(FileDigest {
            path: shown.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(path)?,
            bytes: std::fs::metadata(path).at(path)?.len(),
        })
    }

    pub fn record(&mut self, name: &str, inputs: &[PathBuf], outputs: &[PathBuf], elapsed: Duration) -> CliResult<()> {
        let inputs = inputs.iter().map(|p| self.digest(p)).collect::<CliResult<_>>()?;
        let outputs = outputs.iter().map(|p| self.digest(p)).collect::<CliResult<_>>()?;
        self.stages.push(StageRecord {
            name: name.into(),
            inputs,
            outputs,
            seconds: elapsed.as_secs_f64(),
        });
        Ok(())
    }

    pub fn outputs(&self) -> impl Iterator<Item = &FileDigest> {
        self.stages.iter().flat_map(|s| &s.outputs)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::runtime(e.to_string()))?;
        std::fs::write(path, text + "\n").at(path)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn records_relative_paths_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, "abc").unwrap();
        let mut m = RunManifest::new("gen", "{}", dir.path());
        m.record("gen", &[], std::slice::from_ref(&f), Duration::from_millis(5))
            .unwrap();
        let out = m.outputs().next().unwrap();
        assert_eq!(out.path, "a.txt");
        assert_eq!(out.bytes, 3);
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        assert_eq!(RunManifest::load(&p).unwrap(), m);
    }
}
