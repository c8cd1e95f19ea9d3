//! Layered option resolution: command-line flags override config-file values,
//! which override built-in defaults. The config file is flat `key=value` text
//! with `#` comments; keys match the long flag names.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "config file {}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    lineno + 1
                );
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse::<T>() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!("config key {key}={raw}: {e}"),
            },
        }
    }

    /// flag > config value > default.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(flag.or(self.get(key)?).unwrap_or(default))
    }
}

/// Seed precedence: flag, config file, TEMPOFUSE_SEED env var, 0.
pub fn resolve_seed(flag: Option<u64>, config: &ConfigFile) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    if let Some(seed) = config.get::<u64>("seed")? {
        return Ok(seed);
    }
    if let Ok(raw) = std::env::var("TEMPOFUSE_SEED") {
        return raw
            .parse::<u64>()
            .with_context(|| format!("TEMPOFUSE_SEED={raw} is not a valid seed"));
    }
    Ok(0)
}
