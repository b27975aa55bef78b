//! Run manifest: per-stage content hashes, timings and metrics.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Hash over the stage name, config hash and input hashes.
    pub fingerprint: String,
    /// `true` when the stage was found up to date and not rerun.
    pub skipped: bool,
    pub seconds: f64,
    /// Run-relative path (or absolute path for external files) to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    /// Canonical configuration text.
    pub config: String,
    /// Files written outside any stage directory.
    pub files: BTreeMap<String, String>,
    /// In pipeline order.
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn new(config_hash: &str, config: &str) -> Self {
        Self {
            tool: "unroll".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.into(),
            config: config.into(),
            files: BTreeMap::new(),
            stages: Vec::new(),
        }
    }

    pub fn load(run_dir: &Path) -> Option<Self> {
        let text = fs::read_to_string(run_dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn save(&self, run_dir: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        let tmp = run_dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, text + "\n")?;
        fs::rename(tmp, run_dir.join(MANIFEST_FILE))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Replaces or appends `rec`, keeping `order`.
    pub fn put(&mut self, rec: StageRecord, order: &[&str]) {
        self.stages.retain(|s| s.name != rec.name);
        self.stages.push(rec);
        let pos = |n: &str| order.iter().position(|o| *o == n).unwrap_or(usize::MAX);
        self.stages.sort_by_key(|s| pos(&s.name));
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> io::Result<String> {
    Ok(hash_bytes(&fs::read(path)?))
}

/// Every regular file below `dir`, sorted.
pub fn list_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// `/`-separated path of `path` relative to `root`.
pub fn rel_key(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Hashes every file under `dir`, keyed relative to `root`.
pub fn hash_tree(root: &Path, dir: &Path) -> io::Result<BTreeMap<String, String>> {
    list_files(dir)?
        .into_iter()
        .map(|p| Ok((rel_key(root, &p), hash_file(&p)?)))
        .collect()
}

pub fn fingerprint(stage: &str, config_hash: &str, inputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update([0]);
    h.update(config_hash.as_bytes());
    for (k, v) in inputs {
        h.update([0]);
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
    }
    hex::encode(h.finalize())
}

/// `true` when every recorded output still exists under `root` unchanged.
pub fn outputs_intact(root: &Path, outputs: &BTreeMap<String, String>) -> bool {
    outputs
        .iter()
        .all(|(k, v)| hash_file(&root.join(k)).is_ok_and(|h| &h == v))
}
