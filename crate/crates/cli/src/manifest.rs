//! Provenance block embedded in every machine-readable output.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA: &str = "lppl-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path, bytes: &[u8]) -> Self {
        Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub version: String,
    /// Absent from comma-separated outputs, which are byte-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, inputs: Vec<InputDigest>) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
        }
    }

    /// `#` comment lines for the head of a comma-separated file.
    pub fn csv_header(&self) -> String {
        let bare = Self {
            timestamp: None,
            ..self.clone()
        };
        format!(
            "# lppl {} {}\n# manifest: {}\n",
            self.command,
            SCHEMA,
            serde_json::to_string(&bare).expect("manifest serializes")
        )
    }
}
