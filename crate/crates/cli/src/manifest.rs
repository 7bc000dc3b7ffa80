//! Run manifests: the parameters, config snapshot and content hashes of every
//! input and output of one command.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use wdgda::data::Case;
use wdgda::training::TrainConfig;
use wdgda::{Error, Result};

pub const FILE_NAME: &str = "manifest.json";

/// SHA-256 of the bytes framed as a git blob (`blob <len>\0<bytes>`).
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn file_entry(path: &Path) -> Result<Value> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(json!({ "path": path.display().to_string(), "bytes": bytes.len(), "sha256": blob_hash(&bytes) }))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub struct Manifest {
    command: &'static str,
    started: u64,
    params: Map<String, Value>,
    config: Option<String>,
    inputs: Vec<Value>,
    outputs: Vec<Value>,
}

impl Manifest {
    pub fn new(command: &'static str) -> Manifest {
        Manifest {
            command,
            started: unix_now(),
            params: Map::new(),
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn param(&mut self, key: &str, v: impl Into<Value>) {
        self.params.insert(key.to_string(), v.into());
    }

    pub fn config(&mut self, cfg: &TrainConfig) {
        self.param("seed", cfg.seed);
        self.config = Some(cfg.to_kv_string());
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(file_entry(path)?);
        Ok(())
    }

    /// Records every volume and mask file of a loaded dataset.
    pub fn dataset_inputs(&mut self, dir: &Path, cases: &[Case]) -> Result<()> {
        for c in cases {
            self.input(&dir.join(format!("{}.vol", c.name)))?;
            if c.mask.is_some() {
                self.input(&dir.join(format!("{}.mask", c.name)))?;
            }
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(file_entry(path)?);
        Ok(())
    }

    fn to_json(&self) -> Value {
        let joined: String = self
            .inputs
            .iter()
            .map(|v| format!("{} {}\n", v["sha256"].as_str().unwrap_or(""), v["path"].as_str().unwrap_or("")))
            .collect();
        json!({
            "command": self.command,
            "params": self.params,
            "config": self.config,
            "inputs": self.inputs,
            "inputs_hash": blob_hash(joined.as_bytes()),
            "outputs": self.outputs,
            "started_unix": self.started,
            "finished_unix": unix_now(),
        })
    }

    /// Writes `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.write_as(&dir.join(FILE_NAME))
    }

    pub fn write_as(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("json values serialize");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// A string or number parameter from an existing manifest.
pub fn read_param(path: &Path, key: &str) -> Option<String> {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
    match &v["params"][key] {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_of_empty_input() {
        // sha256 of the 7 bytes "blob 0\0"
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
