//! Flat key-value config files (`key = value`, `#` comments). Flags always
//! override file values; the merge happens per field in the subcommands.

use std::collections::HashMap;
use std::path::Path;

use attfm::{Error, Result};

/// Parsed config file: lower-cased keys to raw string values.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: HashMap<String, String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut values = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::validation(format!(
                    "config line {}: expected `key = value`, got `{raw}`",
                    idx + 1
                ))
            })?;
            values.insert(key.trim().to_lowercase(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Flag value if present, else the parsed file value.
    pub fn merge<T: Clone + std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::validation(format!("config key `{key}`: cannot parse `{raw}`"))
            }),
        }
    }
}
