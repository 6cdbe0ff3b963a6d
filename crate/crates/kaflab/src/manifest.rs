//! `manifest.json`: what was run, on which configuration, producing which files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::error::{Error, Result};
use crate::io::write_text;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Hash git assigns to a blob with these contents.
pub fn git_blob_sha1(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha1: String,
    pub bytes: u64,
}

impl FileEntry {
    pub fn of(path: &Path, display: &str) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(FileEntry {
            path: display.to_string(),
            sha1: git_blob_sha1(&data),
            bytes: data.len() as u64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<String>,
    pub config_sha1: Option<String>,
    /// Canonical rendering of every setting, defaults and overrides applied.
    pub resolved_config: Option<String>,
    pub seed: Option<u64>,
    pub out_dir: String,
    pub inputs: Vec<FileEntry>,
    /// Outputs, relative to `out_dir`.
    pub files: Vec<FileEntry>,
    pub notes: Vec<String>,
    pub started: String,
    pub finished: String,
}

pub fn now_rfc3339() -> String {
    OffsetDateTime::now_utc().format(&Rfc3339).unwrap_or_else(|_| "unknown".into())
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv: std::env::args().collect(),
            config_path: None,
            config_sha1: None,
            resolved_config: None,
            seed: None,
            out_dir: out_dir.display().to_string(),
            inputs: Vec::new(),
            files: Vec::new(),
            notes: Vec::new(),
            started: now_rfc3339(),
            finished: String::new(),
        }
    }

    pub fn with_config(mut self, path: &Path, raw: &str, resolved: String, seed: u64) -> Self {
        self.config_path = Some(path.display().to_string());
        self.config_sha1 = Some(git_blob_sha1(raw.as_bytes()));
        self.resolved_config = Some(resolved);
        self.seed = Some(seed);
        self
    }

    /// Records an output file that already exists under `out_dir`.
    pub fn add_output(&mut self, out_dir: &Path, name: &str) -> Result<()> {
        self.files.push(FileEntry::of(&out_dir.join(name), name)?);
        Ok(())
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileEntry::of(path, &path.display().to_string())?);
        Ok(())
    }

    /// Stamps the finish time and writes `manifest.json` into `out_dir`.
    pub fn write(mut self, out_dir: &Path) -> Result<Self> {
        self.finished = now_rfc3339();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_text(&out_dir.join(MANIFEST_NAME), &(text + "\n"))?;
        Ok(self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.line(), e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(git_blob_sha1(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
        assert_eq!(git_blob_sha1(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        write_text(&dir.path().join("a.csv"), "n,mse\n").unwrap();
        let mut m = RunManifest::new("simulate", dir.path()).with_config(Path::new("x.cfg"), "[kernel]\n", "r".into(), 4);
        m.add_output(dir.path(), "a.csv").unwrap();
        let m = m.write(dir.path()).unwrap();
        let back = RunManifest::read(&dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.files[0].bytes, 6);
    }
}
