use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::CliError;

pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written by every command. Holds no timestamps, so
/// equal runs write equal manifests. The config is recorded as written,
/// with `${VAR}` placeholders unexpanded, so secrets never reach it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: serde_json::Value,
    pub config_hash: String,
    pub config: Config,
    pub env_vars: BTreeSet<String>,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub exit_code: u8,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &Config) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

fn file_sha(p: &Path) -> Result<String, CliError> {
    let mut f = std::fs::File::open(p).map_err(|e| lexigraph::Error::io(p, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| lexigraph::Error::io(p, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Digests of `paths`, expanding directories to their files in name order.
/// Paths under `relative_to` are recorded relative to it.
pub fn digests(paths: &[PathBuf], relative_to: Option<&Path>) -> Result<Vec<FileDigest>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        collect(p, &mut files)?;
    }
    files.sort();
    files.dedup();
    files
        .into_iter()
        .map(|f| {
            let shown = relative_to
                .and_then(|base| f.strip_prefix(base).ok())
                .unwrap_or(&f)
                .to_string_lossy()
                .replace('\\', "/");
            Ok(FileDigest {
                sha256: file_sha(&f)?,
                path: shown,
            })
        })
        .collect()
}

fn collect(p: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if p.is_dir() {
        let rd = std::fs::read_dir(p).map_err(|e| lexigraph::Error::io(p, e))?;
        for entry in rd {
            let entry = entry.map_err(|e| lexigraph::Error::io(p, e))?;
            collect(&entry.path(), out)?;
        }
    } else if p.exists() {
        out.push(p.to_path_buf());
    }
    Ok(())
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("lexigraph-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("lexigraph-core".to_string(), lexigraph::VERSION.to_string()),
    ])
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let dir = out_dir.join(MANIFEST_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| lexigraph::Error::io(&dir, e))?;
        let p = dir.join(format!("{}.json", self.command.replace(' ', "-")));
        let body = serde_json::to_string_pretty(self).map_err(lexigraph::Error::from)?;
        std::fs::write(&p, body + "\n").map_err(|e| lexigraph::Error::io(&p, e))?;
        Ok(p)
    }
}
