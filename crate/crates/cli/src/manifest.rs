//! Run manifests: the resolved config, input and output hashes, and the seeds
//! in effect. A manifest is enough to repeat a run.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::pipeline::Files;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub key: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputHash {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub train: u64,
    pub targets: u64,
    pub sbm: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub mode: String,
    /// Resolved config as TOML.
    pub config: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<OutputHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(config: &RunConfig, files: &Files) -> Result<Self, CliError> {
        let text = config.to_toml();
        let p = &config.paths;
        let mut inputs = Vec::new();
        for (key, path) in [
            ("graph", &p.graph),
            ("features", &p.features),
            ("labels", &p.labels),
            ("logits", &p.logits),
            ("checkpoint", &p.checkpoint),
            ("budgets", &p.budgets),
            ("certificates", &p.certificates),
        ] {
            if let Some(path) = path {
                inputs.push(InputHash {
                    key: key.to_string(),
                    path: path.clone(),
                    sha256: sha256_hex(&fs::read(path)?),
                });
            }
        }
        let mode = serde_json::to_value(config.mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            mode,
            config_sha256: sha256_hex(text.as_bytes()),
            config: text,
            seeds: Seeds {
                train: config.train.seed,
                targets: config.targets.seed,
                sbm: config.sbm.seed,
            },
            inputs,
            outputs: files
                .iter()
                .map(|(name, body)| OutputHash {
                    file: name.clone(),
                    sha256: sha256_hex(body),
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let m: Manifest =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("manifest: {e}")))?;
        if sha256_hex(m.config.as_bytes()) != m.config_sha256 {
            return Err(CliError::Validation("manifest config hash does not match its config".into()));
        }
        Ok(m)
    }

    /// Errors when an input file changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<(), CliError> {
        for input in &self.inputs {
            let bytes = fs::read(&input.path)
                .map_err(|e| CliError::Io(format!("{}: {e}", input.path.display())))?;
            if sha256_hex(&bytes) != input.sha256 {
                return Err(CliError::Validation(format!(
                    "input {} ({}) changed since the manifest was written",
                    input.key,
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}
