use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::Config;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one CLI run: what was asked, with which config, and what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub git_describe: Option<String>,
    pub config_hash: String,
    pub config: Value,
    pub outputs: Vec<String>,
    pub metrics: Value,
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>, cfg: &Config, git_describe: Option<String>) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            args,
            git_describe,
            config_hash: format!("{:016x}", cfg.hash()),
            config: serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?,
            outputs: Vec::new(),
            metrics: Value::Object(Default::default()),
        })
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        if let (Value::Object(map), Ok(v)) = (&mut self.metrics, serde_json::to_value(value)) {
            map.insert(key.to_string(), v);
        }
    }

    /// Merges into an existing manifest.json under the command's key, so a
    /// directory used for several stages keeps every run's record.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(MANIFEST_FILE);
        let mut root = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str::<Value>(&text).unwrap_or(Value::Object(Default::default())),
            Err(_) => Value::Object(Default::default()),
        };
        if !root.is_object() {
            root = Value::Object(Default::default());
        }
        let entry = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        root.as_object_mut()
            .expect("object")
            .insert(self.command.clone(), entry);
        let text = serde_json::to_string_pretty(&root).map_err(|e| Error::Config(e.to_string()))?;
        write_atomic(&path, text.as_bytes())
    }
}
