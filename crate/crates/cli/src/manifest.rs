//! Run manifests: the resolved parameters, seed, inputs and outputs of one
//! command, written next to each result as `<output>.manifest.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::format::{atomic_write, read_text};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub inputs: Vec<InputRef>,
    pub outputs: Vec<String>,
    /// Quantities computed during the run that are worth auditing (e.g. the
    /// quantile rank behind `q_hat`).
    pub derived: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            params: BTreeMap::new(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            derived: BTreeMap::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn derived(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.derived.insert(key.to_string(), value.to_string());
        self
    }

    /// Records an input file along with the hash of its bytes.
    pub fn input(&mut self, path: &Path, bytes: &[u8]) -> &mut Self {
        self.inputs.push(InputRef {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Data(format!("manifest: {e}")))
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    /// Writes the manifest beside `output` and returns its hash.
    pub fn write_beside(&self, output: &Path) -> Result<String, CliError> {
        atomic_write(&sidecar_path(output), self.to_json().as_bytes())?;
        Ok(self.hash())
    }

    pub fn read_beside(output: &Path) -> Result<Self, CliError> {
        Self::from_json(&read_text(&sidecar_path(output))?)
    }
}

pub fn sidecar_path(output: &Path) -> std::path::PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_stable_hash() {
        let mut m = RunManifest::new("calibrate");
        m.param("alpha", 0.1)
            .param("variant", "aps")
            .input(Path::new("a.csv"), b"xyz");
        m.output(Path::new("c.txt")).derived("quantile_rank", 901);
        m.seed = Some(42);
        let back = RunManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
        assert_eq!(m.hash().len(), 64);
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(
            sidecar_path(Path::new("out/preds.csv")),
            Path::new("out/preds.csv.manifest.json")
        );
    }
}
