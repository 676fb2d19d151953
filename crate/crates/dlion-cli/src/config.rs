//! TOML config files. The run itself lives under a `[run]` table that
//! mirrors `RunConfig` field for field; `[output]` carries CLI-side paths.
//! Parsing is strict: an unknown or misspelled key anywhere is a config
//! error, not a silently ignored default.

use std::fs;
use std::path::{Path, PathBuf};

use dlion::sim::RunConfig;
use dlion::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputCfg {
    /// Output directory; the --out-dir flag and DLION_OUT_DIR env var both
    /// take precedence over this.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputCfg,
}

impl ConfigFile {
    pub fn defaults() -> Self {
        ConfigFile {
            run: RunConfig::default_config(),
            output: OutputCfg::default(),
        }
    }
}

pub fn load(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: ConfigFile = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    file.run.validate()?;
    Ok(file)
}

pub fn to_toml(file: &ConfigFile) -> Result<String> {
    toml::to_string_pretty(file).map_err(|e| Error::Config(format!("cannot serialize: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_toml_round_trip() {
        let defaults = ConfigFile::defaults();
        let text = to_toml(&defaults).unwrap();
        let back: ConfigFile = toml::from_str(&text).unwrap();
        assert_eq!(back, defaults);
    }

    #[test]
    fn misspelled_keys_are_rejected() {
        let mut text = to_toml(&ConfigFile::defaults()).unwrap();
        text.push_str("\n[run.hypre]\nlr = 0.1\n");
        assert!(toml::from_str::<ConfigFile>(&text).is_err());
    }
}
