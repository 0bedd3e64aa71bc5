//! Layered run configuration: defaults, then a key-value config file,
//! then command-line flags. Every run writes its resolved configuration
//! alongside its outputs so reruns are reproducible.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;

use ridnet_core::error::{Error, Result};

#[derive(Debug, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt(&mut self, key: &str, value: Option<impl Display>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Loads `key = value` lines; `#` starts a comment.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::arg(format!(
                    "{}:{}: expected `key = value`, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.values
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::arg(format!("required setting {key} was never provided")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::arg(format!("setting {key}={raw:?} failed to parse")))
    }

    /// Writes the resolved settings as sorted `key = value` lines.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir)?;
        let mut text = String::new();
        for (k, v) in &self.values {
            text.push_str(&format!("{k} = {v}\n"));
        }
        fs::write(out_dir.join("resolved_config.txt"), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cfg.txt");
        fs::write(&file, "# comment\nseed = 42\npatch = 16\n").unwrap();
        let mut cfg = RunConfig::new();
        cfg.set("seed", 0); // default
        cfg.set("dose", 0.25); // default
        cfg.merge_file(&file).unwrap();
        cfg.set("patch", 32); // flag wins
        assert_eq!(cfg.get("seed"), Some("42"));
        assert_eq!(cfg.get("dose"), Some("0.25"));
        assert_eq!(cfg.get("patch"), Some("32"));
    }

    #[test]
    fn resolved_file_is_sorted_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new();
        cfg.set("zeta", 1);
        cfg.set("alpha", 2);
        cfg.write_resolved(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("resolved_config.txt")).unwrap();
        assert_eq!(text, "alpha = 2\nzeta = 1\n");
    }
}
