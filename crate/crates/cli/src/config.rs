//! The single config file. Every section is optional; command-line flags
//! are applied on top.
//!
//! ```toml
//! [task]
//! task = "hurdles"
//! terrain = { kind = "hurdles", count = 3 }
//! camera = { width = 160, height = 90 }
//!
//! [bench]
//! delay_ms = 780.0
//!
//! [paths]
//! store = "data/store"
//! pool = "data/prompts"
//! broker = "127.0.0.1:7878"
//! ```
//!
//! Files ending in `.json` are read as JSON, anything else as TOML.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dreamflow::pipeline::TaskConfig;
use dreamflow::BenchConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub store: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub broker: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub task: TaskConfig,
    pub bench: BenchConfig,
    pub paths: Paths,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }
}

/// `value` if given, otherwise what the config says.
pub fn pick<T: Clone>(value: &Option<T>, fallback: &Option<T>) -> Option<T> {
    value.clone().or_else(|| fallback.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        fs::write(
            &t,
            "[task]\ntask = \"hurdles\"\ncamera = { width = 64, height = 36 }\n[paths]\nstore = \"s\"\n",
        )
        .unwrap();
        let a = FileConfig::load(Some(&t)).unwrap();
        assert_eq!(a.task.task, "hurdles");
        assert_eq!(a.task.camera.width, 64);
        assert_eq!(a.task.camera.fov_deg, 120.0);
        let j = dir.path().join("c.json");
        fs::write(&j, serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(FileConfig::load(Some(&j)).unwrap(), a);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        fs::write(&t, "[task]\nwidth = 3\n").unwrap();
        assert!(FileConfig::load(Some(&t)).is_err());
    }
}
