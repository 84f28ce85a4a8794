//! Record of what a training run read and wrote.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// `None` when the run used built-in defaults.
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub metrics: PathBuf,
    pub policy: PathBuf,
    /// Intermediate snapshots in step order, then the final one.
    pub snapshots: Vec<PathBuf>,
    pub steps_completed: u64,
}

impl RunManifest {
    pub const FILE_NAME: &'static str = "manifest.json";
    pub const METRICS: &'static str = "metrics.jsonl";
    pub const POLICY: &'static str = "policy.json";
    pub const FINAL_SNAPSHOT: &'static str = "library.snapshot";

    pub fn snapshot_name(step: u64) -> String {
        format!("library.step{step:06}.snapshot")
    }
}
