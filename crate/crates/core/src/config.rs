//! Flat `key = value` config files. Blank lines and `#` comments are
//! ignored; every key must be known and may appear once.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{PlcError, Result};

/// Parsed entries, keyed by name.
#[derive(Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str, known: &[&str]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(PlcError::BadConfigValue {
                    key: line.to_string(),
                    detail: format!("line {} is not `key = value`", n + 1),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !known.contains(&key) {
                return Err(PlcError::UnknownConfigKey { key: key.to_string() });
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(PlcError::BadConfigValue {
                    key: key.to_string(),
                    detail: "given more than once".into(),
                });
            }
        }
        Ok(Self { entries })
    }

    /// Overwrites `slot` when `key` is present.
    pub fn read<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.entries.get(key) {
            *slot = v.parse().map_err(|e: T::Err| PlcError::BadConfigValue {
                key: key.to_string(),
                detail: format!("`{v}`: {e}"),
            })?;
        }
        Ok(())
    }
}

pub(crate) fn bad(key: &str, detail: impl Into<String>) -> PlcError {
    PlcError::BadConfigValue {
        key: key.to_string(),
        detail: detail.into(),
    }
}
