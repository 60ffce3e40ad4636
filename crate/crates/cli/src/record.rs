//! Run records: what was run, with which seed, and how long it took.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use cdp_core::imgcore::write_json;
use serde::Serialize;
use serde_json::Value;

use crate::error::Result;
use crate::workspace::Workspace;

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub arguments: Vec<String>,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub versions: BTreeMap<String, String>,
    pub started_unix_ms: u128,
    pub elapsed_seconds: f64,
    pub stages: BTreeMap<String, f64>,
    pub status: String,
    pub error: Option<String>,
    pub summary: Value,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("cdp-lab".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        (
            "checkpoint_format".to_string(),
            "cdp-checkpoint-v1".to_string(),
        ),
    ])
}

pub fn write(ws: &Workspace, rec: &RunRecord) -> Result<PathBuf> {
    let path = ws
        .runs_dir()
        .join(format!("{}-{}.json", rec.started_unix_ms, rec.command));
    write_json(&path, rec)?;
    Ok(path)
}
