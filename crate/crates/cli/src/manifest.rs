//! Output manifests: one line per artifact with its SHA-256, plus the CSV
//! column sets. No timestamps or host details, so identical runs produce
//! identical manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.txt";
const HEADER: &str = "rml-manifest 1";

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("checksum mismatch for {path}: manifest {expected}, file {actual}")]
    Checksum {
        path: String,
        expected: String,
        actual: String,
    },
    #[error("malformed manifest line {line}: {text}")]
    Malformed { line: usize, text: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    /// Relative path → hex digest.
    pub files: BTreeMap<String, String>,
    /// CSV relative path → column header.
    pub columns: BTreeMap<String, String>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for (path, digest) in &self.files {
            let _ = writeln!(s, "file {digest} {path}");
        }
        for (path, header) in &self.columns {
            let _ = writeln!(s, "columns {path} {header}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            let bad = || ManifestError::Malformed {
                line: i + 1,
                text: line.to_string(),
            };
            if i == 0 {
                if line != HEADER {
                    return Err(bad());
                }
                continue;
            }
            let mut parts = line.splitn(3, ' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some("file"), Some(d), Some(p)) => {
                    m.files.insert(p.to_string(), d.to_string());
                }
                (Some("columns"), Some(p), Some(h)) => {
                    m.columns.insert(p.to_string(), h.to_string());
                }
                _ => return Err(bad()),
            }
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, ManifestError> {
        let path = dir.join(MANIFEST_NAME);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(Self::parse(&std::fs::read_to_string(path)?)?))
    }

    /// Checks every listed file that exists; missing files are reported back
    /// rather than treated as errors.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>, ManifestError> {
        let mut missing = Vec::new();
        for (path, expected) in &self.files {
            let full = dir.join(path);
            if !full.exists() {
                missing.push(path.clone());
                continue;
            }
            let actual = sha256_hex(&std::fs::read(&full)?);
            if &actual != expected {
                return Err(ManifestError::Checksum {
                    path: path.clone(),
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        Ok(missing)
    }
}

/// Writes artifacts under one directory and keeps the manifest current.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    manifest: Manifest,
}

impl OutputDir {
    pub fn create(root: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Manifest::default(),
        })
    }

    /// Starts from an existing manifest (resume).
    pub fn with_manifest(root: &Path, manifest: Manifest) -> std::io::Result<Self> {
        let mut d = Self::create(root)?;
        d.manifest = manifest;
        Ok(d)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
        let full = self.root.join(rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&full, bytes)?;
        self.manifest
            .files
            .insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_csv(&mut self, rel: &str, header: &str, rows: &[String]) -> std::io::Result<()> {
        let mut s = String::with_capacity(64 * (rows.len() + 1));
        s.push_str(header);
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        self.manifest
            .columns
            .insert(rel.to_string(), header.to_string());
        self.write_bytes(rel, s.as_bytes())
    }

    pub fn forget(&mut self, rel: &str) {
        self.manifest.files.remove(rel);
        self.manifest.columns.remove(rel);
    }

    pub fn flush_manifest(&self) -> std::io::Result<()> {
        std::fs::write(self.root.join(MANIFEST_NAME), self.manifest.render())
    }
}
