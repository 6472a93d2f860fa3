//! Run manifests: resolved configuration plus SHA-256 content hashes of
//! every file a command read or wrote.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use fedembed_core::error::{Error, Result};
use fedembed_core::io;

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(sha256_hex(&bytes))
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a RunConfig,
    files: &'a BTreeMap<String, String>,
}

/// Writes `manifest.json` into `dir`.
pub fn write_manifest(
    dir: &Path,
    config: &RunConfig,
    files: &BTreeMap<String, String>,
) -> Result<()> {
    let manifest = Manifest { config, files };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    io::write_text(&dir.join("manifest.json"), &text)
}
