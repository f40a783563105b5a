//! Atomic artifact writes and the hash wrapper carried by JSON outputs.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use camoforge_core::config::RunConfig;

/// Writes through a sibling temp file and a rename, so an interrupted run
/// never leaves a truncated artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `texture.json` -> `texture.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

/// A payload tagged with the config that produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Meta<T> {
    pub config_hash: String,
    pub seed: u64,
    pub value: T,
}

impl<T> Meta<T> {
    pub fn new(cfg: &RunConfig, value: T) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            value,
        }
    }
}
