//! Run manifests: the record every output directory starts from.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: String,
    /// Hash over the config file bytes and the resolved arguments.
    pub config_hash: String,
    /// Resolved arguments, in the order the subcommand lists them.
    pub arguments: Vec<(String, String)>,
}

/// Git-style content hash: SHA-256 over `blob <len>\0<bytes>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        config_path: Option<&Path>,
        config_text: &str,
        seed: Option<u64>,
        output_dir: &Path,
        arguments: Vec<(String, String)>,
    ) -> Self {
        let mut hashed = config_text.as_bytes().to_vec();
        for (k, v) in &arguments {
            hashed.extend_from_slice(format!("\n{k}={v}").as_bytes());
        }
        Self {
            subcommand: subcommand.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            output_dir: output_dir.display().to_string(),
            config_hash: content_hash(&hashed),
            arguments,
        }
    }

    /// Creates the output directory and writes the manifest into it.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_blob_layout() {
        // `printf 'blob 0\0' | sha256sum`
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn arguments_change_the_hash() {
        let dir = Path::new("out");
        let a = RunManifest::new("eval", None, "", Some(1), dir, vec![("episodes".into(), "10".into())]);
        let b = RunManifest::new("eval", None, "", Some(1), dir, vec![("episodes".into(), "11".into())]);
        assert_ne!(a.config_hash, b.config_hash);
    }
}
