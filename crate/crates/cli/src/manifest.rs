//! `run_manifest.json`: what was run and what it produced. No timestamps,
//! so two identical runs write identical manifests.

use crate::config::ExperimentConfig;
use crate::report::Outputs;
use anyhow::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    /// Hash of the config file as read.
    source_sha256: Option<String>,
    /// Hash of the effective config after command-line overrides.
    config_sha256: String,
    config: Option<&'a ExperimentConfig>,
    outputs: Vec<FileEntry>,
}

/// Writes the manifest listing every file in `out` with its hash.
pub fn write_manifest(
    out: &mut Outputs,
    command: &str,
    cfg: Option<&ExperimentConfig>,
    source: Option<&[u8]>,
) -> Result<()> {
    let effective = match cfg {
        Some(c) => serde_json::to_vec(c)?,
        None => Vec::new(),
    };
    let mut files = out.files.clone();
    files.sort();
    files.dedup();
    let outputs = files
        .iter()
        .map(|rel| {
            let bytes = std::fs::read(out.root.join(rel))?;
            Ok(FileEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        source_sha256: source.map(sha256),
        config_sha256: sha256(&effective),
        config: cfg,
        outputs,
    };
    let text = serde_json::to_string_pretty(&m)?;
    std::fs::write(out.root.join("run_manifest.json"), text + "\n")?;
    Ok(())
}
