use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "artifacts.json";
pub const PHASE2_RESULT_ROLE: &str = "phase2_result";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
    pub role: String,
}

fn role_of(rel: &str) -> &'static str {
    let top = rel.split('/').next().unwrap_or("");
    if rel.starts_with("phase2/") && rel.ends_with("/result.json") {
        return PHASE2_RESULT_ROLE;
    }
    match top {
        "config.toml" => "config",
        "data" => "dataset",
        "preprocess" => "preprocess",
        "detect" => "detections",
        "phase1" => "phase1_report",
        "phase2" => "phase2",
        "overlays" => "overlay",
        _ => "other",
    }
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Hashes every file under `run_dir` (except the manifest itself) and writes
/// `artifacts.json`, entries sorted by path.
pub fn write_artifact_manifest(run_dir: &Path) -> Result<Vec<ArtifactEntry>> {
    let mut files = Vec::new();
    collect(run_dir, &mut files)?;
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let rel = f
            .strip_prefix(run_dir)
            .expect("collected under run_dir")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if rel == MANIFEST_NAME {
            continue;
        }
        let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
        entries.push(ArtifactEntry {
            role: role_of(&rel).to_string(),
            path: rel,
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let p = run_dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&entries).expect("artifact list serializes") + "\n";
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(entries)
}
