//! Output bundle: every emitted file is listed in `manifest.json` with its
//! SHA-256.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use css_envelope::sim::hex_digest;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: &'a str,
    files: &'a [ManifestEntry],
}

pub struct Bundle {
    dir: PathBuf,
    command: String,
    config_sha256: String,
    files: Vec<ManifestEntry>,
}

impl Bundle {
    pub fn create(dir: PathBuf, command: &str, config_bytes: &[u8]) -> io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            command: command.to_string(),
            config_sha256: hex_digest(config_bytes),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        fs::write(self.path(name), bytes)?;
        self.files.push(ManifestEntry {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex_digest(bytes),
        });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Write rows through a CSV writer.
    pub fn csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(io::Error::other)?;
        for r in rows {
            w.write_record(&r).map_err(io::Error::other)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| io::Error::other(e.to_string()))?;
        self.write(name, &bytes)
    }

    /// Register a file that was streamed to disk directly.
    pub fn register(&mut self, name: &str) -> io::Result<()> {
        let bytes = fs::read(self.path(name))?;
        self.files.push(ManifestEntry {
            file: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex_digest(&bytes),
        });
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<Vec<ManifestEntry>> {
        self.files.sort_by(|a, b| a.file.cmp(&b.file));
        let manifest = Manifest {
            command: &self.command,
            config_sha256: &self.config_sha256,
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.files)
    }
}

/// Plain decimal for CSV cells; empty for missing or non-finite values.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

pub fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}
