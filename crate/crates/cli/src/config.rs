// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: a JSON config file merged with command-line flags,
//! flags winning. Unknown file keys, missing required keys and wrongly
//! typed values are all reported by key name.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::CliError;

/// Every key a config file may carry.
const ALLOWED_KEYS: &[&str] = &[
    "model_dir",
    "data",
    "diffs",
    "mask",
    "masks",
    "direction",
    "class",
    "template",
    "k",
    "k_grid",
    "delta",
    "delta_grid",
    "mode",
    "positions",
    "seed",
    "seeds",
    "out",
    "prompt",
    "max_new",
    "task",
    "top",
    "random",
    "signed",
    "mc_norm",
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    map: BTreeMap<String, Value>,
}

impl RunConfig {
    /// Merge an optional JSON config file with flag overrides.
    pub fn from_sources(
        file: Option<&Path>,
        overrides: Vec<(&'static str, Value)>,
    ) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config("IoFailure", format!("config file {}: {e}", path.display())))?;
            let parsed: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config("MalformedJson", format!("config file: {e}")))?;
            let obj = parsed.as_object().ok_or_else(|| {
                CliError::config("TypeError", "config file must be a JSON object".to_string())
            })?;
            for (key, value) in obj {
                if !ALLOWED_KEYS.contains(&key.as_str()) {
                    return Err(CliError::config("UnknownKey", key.clone()));
                }
                map.insert(key.clone(), value.clone());
            }
        }
        for (key, value) in overrides {
            map.insert(key.to_string(), value);
        }
        Ok(RunConfig { map })
    }

    /// Effective configuration for provenance.
    pub fn snapshot(&self) -> Value {
        Value::Object(self.map.clone().into_iter().collect())
    }

    pub fn optional<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|_| CliError::config("TypeError", key.to_string())),
        }
    }

    pub fn require<T: DeserializeOwned>(&self, key: &str) -> Result<T, CliError> {
        self.optional(key)?
            .ok_or_else(|| CliError::config("MissingRequired", key.to_string()))
    }

    pub fn get_or<T: DeserializeOwned>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.optional(key)?.unwrap_or(default))
    }

    /// A required path that must already exist.
    pub fn require_existing_path(&self, key: &str) -> Result<std::path::PathBuf, CliError> {
        let s: String = self.require(key)?;
        let path = std::path::PathBuf::from(&s);
        if !path.exists() {
            return Err(CliError::config(
                "IoFailure",
                format!("{key} path does not exist: {s}"),
            ));
        }
        Ok(path)
    }
}

/// Helper for building flag override lists.
pub fn push_if<T: serde::Serialize>(
    overrides: &mut Vec<(&'static str, Value)>,
    key: &'static str,
    value: &Option<T>,
) {
    if let Some(v) = value {
        overrides.push((key, serde_json::to_value(v).expect("flag serialization")));
    }
}
