use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written next to every output.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: Option<u64>,
    /// SHA-256 over the input file digests and the effective parameters.
    pub inputs_hash: String,
    pub inputs: Vec<InputDigest>,
    pub parameters: Value,
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Hashes raw input bytes as they were read.
pub struct InputSet {
    digests: Vec<InputDigest>,
}

impl InputSet {
    pub fn new() -> Self {
        InputSet { digests: Vec::new() }
    }

    pub fn add(&mut self, path: &Path, bytes: &[u8]) {
        self.digests.push(InputDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) });
    }

    pub fn manifest(
        self,
        subcommand: &'static str,
        seed: Option<u64>,
        parameters: Value,
        output: Option<&Path>,
    ) -> Manifest {
        let mut h = Sha256::new();
        for d in &self.digests {
            h.update(d.sha256.as_bytes());
            h.update(b"\n");
        }
        h.update(parameters.to_string().as_bytes());
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            seed,
            inputs_hash: hex(&h.finalize()),
            inputs: self.digests,
            parameters,
            output: output.map(|p| p.display().to_string()),
            details: Value::Null,
        }
    }
}

/// `out.csv` → `out.csv.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
