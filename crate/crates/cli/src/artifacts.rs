//! Output directory handling: atomic writes, digests, the run manifest and
//! the timing sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(format!("cannot write {}: {e}", path.display()))
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub rows: BTreeMap<String, u64>,
    /// Output file name to sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputDigest>,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Output directory with stage bookkeeping.
#[derive(Debug)]
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn read(&self, name: &str, stage: &str) -> Result<String, CliError> {
        let p = self.path(name);
        fs::read_to_string(&p).map_err(|e| {
            CliError::missing(format!("{stage} needs {} ({e}); run the earlier stage first", p.display()))
        })
    }

    /// Atomically writes `name` and returns its digest.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<String, CliError> {
        write_atomic(&self.path(name), bytes)?;
        Ok(sha256_hex(bytes))
    }

    pub fn load_manifest(&self, config: serde_json::Value) -> Manifest {
        let fresh = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            inputs: BTreeMap::new(),
            stages: BTreeMap::new(),
        };
        match fs::read_to_string(self.path(MANIFEST)).ok().and_then(|t| serde_json::from_str::<Manifest>(&t).ok()) {
            Some(mut m) => {
                m.config = config;
                m.version = fresh.version;
                m
            }
            None => fresh,
        }
    }

    pub fn save_manifest(&self, m: &Manifest) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(m).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.path(MANIFEST), text.as_bytes())
    }

    /// Records a stage's wall time; kept apart from the manifest because it
    /// varies between runs.
    pub fn record_timing(&self, stage: &str, seconds: f64, threads: usize) -> Result<(), CliError> {
        let mut doc: serde_json::Map<String, serde_json::Value> = fs::read_to_string(self.path(TIMINGS))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        doc.insert("threads".into(), threads.into());
        let stages = doc.entry("stages").or_insert_with(|| serde_json::json!({}));
        if let Some(s) = stages.as_object_mut() {
            s.insert(stage.into(), serde_json::json!({ "wall_seconds": seconds }));
        }
        let text = serde_json::to_string_pretty(&doc).expect("timings serialize");
        write_atomic(&self.path(TIMINGS), text.as_bytes())
    }
}
