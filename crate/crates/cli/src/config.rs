use std::path::{Path, PathBuf};

use ets_core::{Error, Result};
use serde::Deserialize;

pub const WORKDIR_ENV: &str = "ETS_WORKDIR";
const DEFAULT_WORKDIR: &str = ".ets";

/// Settings shared by every subcommand, read from a TOML file:
///
/// ```toml
/// master_seed = 7
/// workdir = "runs/exp1"
/// log_level = "info"
/// iou_thresholds = [0.5, 0.75]
/// aug_spec = "aug.toml"
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConfig {
    pub master_seed: Option<u64>,
    pub workdir: Option<PathBuf>,
    pub log_level: Option<String>,
    pub iou_thresholds: Option<Vec<f64>>,
    pub aug_spec: Option<PathBuf>,
}

impl GlobalConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.workdir, &mut cfg.aug_spec].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.master_seed).unwrap_or(0)
    }

    /// Flag, then config file, then `ETS_WORKDIR`, then `.ets`.
    pub fn workdir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.workdir.clone())
            .or_else(|| std::env::var_os(WORKDIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_WORKDIR))
    }
}
