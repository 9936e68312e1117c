//! Dataset manifests: named subsets of (wav, annotation CSV) pairs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable that relocates every feature cache.
pub const CACHE_DIR_ENV: &str = "PROTOSHOT_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub wav: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub name: String,
    pub files: Vec<FileEntry>,
}

/// Paths are stored relative to the manifest's directory and resolved on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub subsets: Vec<Subset>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Manifest> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_owned).unwrap_or_default();
        for f in m.subsets.iter_mut().flat_map(|s| s.files.iter_mut()) {
            f.wav = m.root.join(&f.wav);
            f.csv = f.csv.as_ref().map(|c| m.root.join(c));
        }
        Ok(m)
    }

    /// Writes the manifest with paths as given (callers pass root-relative paths).
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(path, text + "\n").map_err(CliError::io(path))
    }

    pub fn subset(&self, name: &str) -> Option<&Subset> {
        self.subsets.iter().find(|s| s.name == name)
    }

    pub fn all_files(&self) -> impl Iterator<Item = &FileEntry> {
        self.subsets.iter().flat_map(|s| s.files.iter())
    }

    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.root.join("cache"),
        }
    }

    /// Cache file for a wav: its root-relative path with separators flattened.
    pub fn cache_path(&self, wav: &Path) -> PathBuf {
        let rel = wav.strip_prefix(&self.root).unwrap_or(wav);
        let name: Vec<String> = rel
            .with_extension("")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .filter(|c| c != "." && c != "/")
            .collect();
        self.cache_dir().join(format!("{}.psfc", name.join("__")))
    }
}
