//! Flat `key = value` configuration files. Every key can also be given as a
//! `--key value` flag; precedence is flags > file > defaults.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Default)]
pub struct FileConfig {
    values: HashMap<String, String>,
    /// Directory of the config file; relative paths resolve against it.
    base: PathBuf,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut values = HashMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key = value", no + 1))?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig {
            values,
            base: path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(),
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(|v| self.base.join(v))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| format!("config key {key}: cannot parse {v:?}")),
        }
    }
}

/// flag > file > default, for plain values.
pub fn pick<T>(flag: Option<T>, file: Result<Option<T>, String>, default: T) -> Result<T, String> {
    Ok(flag.or(file?).unwrap_or(default))
}

/// flag > file, for optional values.
pub fn pick_opt<T>(flag: Option<T>, file: Result<Option<T>, String>) -> Result<Option<T>, String> {
    Ok(flag.or(file?))
}
