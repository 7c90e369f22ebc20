use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    /// SHA-256 over `blob <len>\0<content>`, the git object framing.
    pub sha256: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// Provenance record of one command invocation. Written once, after the
/// command finishes, and never rewritten.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Resolved training config as `key = value` text, when one applies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    /// Hash over the sorted input digests.
    pub input_hash: String,
    /// Every file under the output directory except this manifest, with
    /// paths relative to it.
    pub outputs: Vec<FileDigest>,
    pub started: String,
    pub finished: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path, label: String) -> anyhow::Result<FileDigest> {
    let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", data.len()).as_bytes());
    h.update(&data);
    Ok(FileDigest {
        path: label,
        bytes: data.len() as u64,
        sha256: hex(&h.finalize()),
    })
}

pub fn combined_hash(digests: &[FileDigest]) -> String {
    let mut lines: Vec<String> = digests.iter().map(|d| format!("{}\0{}\n", d.path, d.sha256)).collect();
    lines.sort();
    hex(&Sha256::digest(lines.concat().as_bytes()))
}

/// Digests of every file under `dir`, sorted by relative path.
pub fn digest_tree(dir: &Path) -> anyhow::Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir)?;
        let label = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if label == MANIFEST_FILE {
            continue;
        }
        out.push(digest_file(entry.path(), label)?);
    }
    Ok(out)
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Inputs and config of a command, fixed before it runs.
pub struct ManifestDraft {
    pub command: String,
    pub config: Option<String>,
    pub config_hash: Option<String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub started: String,
}

impl ManifestDraft {
    /// Completes the manifest from the directory contents and writes it.
    pub fn finish(self, dir: &Path, error: Option<String>) -> anyhow::Result<RunManifest> {
        let path = dir.join(MANIFEST_FILE);
        anyhow::ensure!(!path.exists(), "{} already exists", path.display());
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            status: if error.is_some() { RunStatus::Failed } else { RunStatus::Completed },
            error,
            config: self.config,
            config_hash: self.config_hash,
            seed: self.seed,
            input_hash: combined_hash(&self.inputs),
            inputs: self.inputs,
            outputs: digest_tree(dir)?,
            started: self.started,
            finished: timestamp(),
        };
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
