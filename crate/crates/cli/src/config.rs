//! Flat key-value run configuration: one `key = value` per line, `#`
//! comments. Command-line flags override file values; the fully resolved
//! config is serialized into the output directory before any work starts.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;

#[derive(Debug, Default, Clone)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(format!("config line {} is not key = value", lineno + 1))?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| format!("config key {key}: {e}")),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), String> {
        fs::write(path, self.serialize())
            .map_err(|e| format!("cannot write {}: {e}", path.display()))
    }
}

/// Flag-over-file resolution: explicit CLI value wins, then the config
/// file, then the default.
pub fn resolve<T: Clone + std::str::FromStr>(
    flag: Option<T>,
    config: &ConfigMap,
    key: &str,
    default: T,
) -> Result<T, String>
where
    <T as std::str::FromStr>::Err: Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    Ok(config.get::<T>(key)?.unwrap_or(default))
}
