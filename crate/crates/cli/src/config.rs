//! Layering of command-line flags over an optional JSON config file.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Invalid or missing parameters; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parsed config file; top-level keys are global settings, objects keyed by
/// subcommand name hold that command's parameters.
#[derive(Debug, Default)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(root)) => Ok(Self { root }),
            Ok(_) => Err(usage("config file must hold a JSON object")),
            Err(e) => Err(usage(format!("config {}: {e}", path.display()))),
        }
    }

    pub fn global(&self, key: &str) -> Option<&Value> {
        self.root.get(key)
    }

    /// `flags` with every unset field filled from the command's section.
    pub fn merge<T: Serialize + DeserializeOwned>(&self, command: &str, flags: &T) -> anyhow::Result<T> {
        let mut merged = match self.root.get(command) {
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(usage(format!("config section `{command}` must be an object"))),
            None => Map::new(),
        };
        if let Value::Object(set) = serde_json::to_value(flags)? {
            for (k, v) in set {
                if !v.is_null() {
                    merged.insert(k, v);
                }
            }
        }
        serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("config section `{command}`: {e}")))
    }
}

/// Unwraps a required parameter.
pub fn required<T>(value: Option<T>, flag: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| usage(format!("missing required option --{flag} (flag or config file)")))
}
