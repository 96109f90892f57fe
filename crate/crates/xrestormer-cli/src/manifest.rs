//! Dataset manifests: a named list of clean images with, per image, either
//! a pre-rendered degraded file, a degradation spec to apply on the fly, or
//! both. Stored as TOML next to the data; relative paths resolve against
//! the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xrestormer::degrade::DegradationSpec;
use xrestormer::error::{Error, Result};
use xrestormer::model::TaskMode;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degraded: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub task: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn task_mode(&self) -> Result<TaskMode> {
        self.task.parse()
    }

    /// Parses and fully validates a manifest: the task tag is known, every
    /// referenced file exists, and every spec string is canonical (it
    /// parses and reprints as itself).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = toml::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        manifest.validate(base)?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("manifest to TOML: {e}")))?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self, base: &Path) -> Result<()> {
        let mode = self.task_mode()?;
        if self.entries.is_empty() {
            return Err(Error::Contract(format!("manifest {} has no entries", self.name)));
        }
        for (i, entry) in self.entries.iter().enumerate() {
            let clean = base.join(&entry.clean);
            if !clean.is_file() {
                return Err(Error::Contract(format!(
                    "manifest {} entry {i}: clean image {} does not exist",
                    self.name,
                    clean.display()
                )));
            }
            if entry.degraded.is_none() && entry.spec.is_none() {
                return Err(Error::Contract(format!(
                    "manifest {} entry {i} needs a degraded path or a spec",
                    self.name
                )));
            }
            if let Some(degraded) = &entry.degraded {
                let degraded = base.join(degraded);
                if !degraded.is_file() {
                    return Err(Error::Contract(format!(
                        "manifest {} entry {i}: degraded image {} does not exist",
                        self.name,
                        degraded.display()
                    )));
                }
            }
            if let Some(text) = &entry.spec {
                let spec: DegradationSpec = text.parse()?;
                let canonical = spec.to_string();
                if canonical != *text {
                    return Err(Error::Parse(format!(
                        "manifest {} entry {i}: spec {text:?} is not canonical \
                         (expected {canonical:?})",
                        self.name
                    )));
                }
                if spec.task().to_string() != mode.to_string() {
                    return Err(Error::Contract(format!(
                        "manifest {} entry {i}: spec task {} does not match manifest task {}",
                        self.name,
                        spec.task(),
                        mode
                    )));
                }
            }
        }
        Ok(())
    }
}
