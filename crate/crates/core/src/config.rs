//! Plain-text `key = value` configuration files.
//!
//! One setting per line; blank lines and lines starting with `#` are
//! ignored. Keys may also be separated from values by `:`.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=').or_else(|| line.split_once(':')) else {
                return Err(Error::data(
                    format!("config line {}", n + 1),
                    format!("expected `key = value`, got `{line}`"),
                ));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::data(format!("config line {}", n + 1), "empty key"));
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text).map_err(|e| e.context(path.as_ref().display().to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Last value given for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Entries whose key satisfies `keep`, in file order.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> KeyValues {
        KeyValues {
            entries: self.entries.iter().filter(|(k, _)| keep(k)).cloned().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
