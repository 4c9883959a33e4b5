//! Output directory handling: an exclusive lock file and the run manifest
//! kept at the directory root.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{read_input, write_output, CliError, CliResult};

pub const LOCK_FILE: &str = ".ovitrap.lock";
pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Index of the artifacts under an output directory. Paths are relative to
/// the directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commands: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged: Option<String>,
    #[serde(default)]
    pub reports: Vec<String>,
    /// Effective settings of each command that wrote here.
    #[serde(default)]
    pub config: BTreeMap<String, Value>,
}

pub struct OutDir {
    root: PathBuf,
    lock: PathBuf,
    manifest: RunManifest,
}

impl OutDir {
    /// Creates the directory if needed and takes the lock, failing at once if
    /// another invocation holds it.
    pub fn acquire(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let lock = root.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => CliError::Usage(format!(
                "{} is in use by another invocation (remove {} if it is stale)",
                root.display(),
                lock.display()
            )),
            _ => CliError::io(&lock, e),
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        let path = root.join(RUN_MANIFEST);
        let manifest = if path.exists() {
            serde_json::from_str(&read_input(&path)?).map_err(|e| CliError::schema(&path, e))?
        } else {
            RunManifest::default()
        };
        Ok(Self { root: root.to_path_buf(), lock, manifest })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest_mut(&mut self) -> &mut RunManifest {
        &mut self.manifest
    }

    pub fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let p = self.path(rel);
        write_output(&p, bytes)?;
        Ok(p)
    }

    /// Writes the manifest after checking that every file it names exists.
    pub fn finish(mut self, command: &str, config: Value) -> CliResult<RunManifest> {
        self.manifest.tool = env!("CARGO_PKG_NAME").to_string();
        self.manifest.version = env!("CARGO_PKG_VERSION").to_string();
        self.manifest.config.insert(command.to_string(), config);
        self.manifest.reports.sort();
        self.manifest.reports.dedup();
        let m = &self.manifest;
        let named = [&m.plan, &m.commands, &m.scene, &m.images, &m.detections, &m.merged]
            .into_iter()
            .flatten()
            .chain(&m.reports);
        for rel in named {
            if !self.root.join(rel).exists() {
                return Err(CliError::Invariant(format!("run manifest names missing file {rel}")));
            }
        }
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_output(&self.root.join(RUN_MANIFEST), text + "\n")?;
        Ok(self.manifest.clone())
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}
