//! Run manifests written next to every command's outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file, or for a directory of the sorted list of
/// `relative/path sha256` lines of every file below it.
pub fn digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        let mut h = Sha256::new();
        for rel in files {
            if rel == Path::new(MANIFEST_NAME) {
                continue;
            }
            let line = format!("{} {}\n", rel.display(), digest(&path.join(&rel))?);
            h.update(line.as_bytes());
        }
        Ok(hex(&h.finalize()))
    } else {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(hex(&Sha256::digest(&bytes)))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("below root").to_path_buf());
        }
    }
    Ok(())
}

/// File name of the manifest inside an output directory.
pub const MANIFEST_NAME: &str = "manifest.json";

/// `<dir>/manifest.json` for a directory output, `<file>.manifest.json`
/// for a file output.
pub fn manifest_path(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join(MANIFEST_NAME)
    } else {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

/// Records a command run; [`Run::finish`] writes the manifest whether the
/// command succeeded or not.
pub struct Run {
    manifest: Manifest,
    path: PathBuf,
    started: Instant,
}

impl Run {
    pub fn start(command: &str, manifest_path: PathBuf, config: impl Serialize, seed: Option<u64>) -> Result<Self> {
        Ok(Self {
            manifest: Manifest {
                command: command.to_string(),
                version: TOOL_VERSION.to_string(),
                status: "running".into(),
                error: None,
                seed,
                config: serde_json::to_value(config)?,
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_clock_seconds: 0.0,
            },
            path: manifest_path,
            started: Instant::now(),
        })
    }

    /// Hashes an input now; an unreadable input gets an empty digest and
    /// is left for the command itself to report.
    pub fn input(&mut self, path: &Path) {
        let sha256 = digest(path).unwrap_or_default();
        self.manifest.inputs.push(FileDigest { path: path.to_path_buf(), sha256 });
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(FileDigest { path: path.to_path_buf(), sha256: String::new() });
    }

    /// Writes the manifest and passes `result` through. Outputs are hashed
    /// here, so only files that exist at the end are digested.
    pub fn finish<T>(mut self, result: Result<T>) -> Result<T> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        match &result {
            Ok(_) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.error = Some(format!("{e:#}"));
            }
        }
        for out in &mut self.manifest.outputs {
            out.sha256 = if out.path.exists() { digest(&out.path)? } else { String::new() };
        }
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(&self.path, text).with_context(|| format!("writing {}", self.path.display()))?;
        result
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
