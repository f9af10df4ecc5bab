//! The run record: what ran, what was written and which verdicts held.

use crate::config::Pipeline;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Flat map of every numeric claim of a run, keyed `stage.quantity`.
pub type Summary = BTreeMap<String, serde_json::Value>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    #[serde(default)]
    pub error: Option<String>,
    /// Wall time in seconds; not compared on replay.
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub tool_version: String,
    pub pipeline: Pipeline,
    pub seed: u64,
    pub config_hash: String,
    /// Seconds since the Unix epoch at start and end; not compared on replay.
    pub started_unix: u64,
    pub finished_unix: u64,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<Artifact>,
    pub verdicts: Vec<Verdict>,
    pub summary: Summary,
}

impl RunRecord {
    pub fn passed(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Ok)
            && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn failed_stage(&self) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.status == StageStatus::Failed)
    }
}
