//! Line-delimited rollout records.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::env::State;
use crate::error::{Error, Result};
use crate::planner::Variant;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutRecord {
    pub schema_version: u32,
    pub experiment: String,
    pub task: String,
    pub variant: Variant,
    pub budget: usize,
    pub seed: u64,
    pub states: Vec<State>,
    pub actions: Vec<[f64; 2]>,
    /// First visited-state index within the threshold of each task goal.
    pub first_visits: Vec<Option<usize>>,
    pub goals_found: Vec<bool>,
    pub found: usize,
    /// `null` when no goal was found.
    pub timesteps_per_goal: Option<f64>,
    /// Priority-order pairs matched; only for prioritized multi-goal tasks.
    pub sequence_match: Option<usize>,
    pub success: bool,
    /// True objective of the last selected plan.
    pub true_score: Option<f64>,
    pub plans: usize,
    pub reverse_steps: u64,
    pub candidate_draws: u64,
    pub infeasible_actions: usize,
    pub complete: bool,
    pub error: Option<String>,
    pub wall_ms: f64,
    pub plan_wall_ms: Vec<f64>,
}

impl RolloutRecord {
    /// Copy with the wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_ms: 0.0,
            plan_wall_ms: vec![0.0; self.plan_wall_ms.len()],
            ..self.clone()
        }
    }

    /// Grid cell this record belongs to.
    pub fn cell(&self) -> (String, Variant, usize, u64) {
        (self.task.clone(), self.variant, self.budget, self.seed)
    }
}

/// Append-only JSONL sink shared by worker threads. Each record is written
/// and flushed as one line.
pub struct RecordSink {
    out: Mutex<BufWriter<File>>,
}

impl RecordSink {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            out: Mutex::new(BufWriter::new(File::create(path)?)),
        })
    }

    pub fn write(&self, record: &RolloutRecord) -> Result<()> {
        let line = serde_json::to_string(record)?;
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(out, "{line}")?;
        out.flush()?;
        Ok(())
    }
}

pub fn write_records(path: &Path, records: &[RolloutRecord]) -> Result<()> {
    let sink = RecordSink::create(path)?;
    records.iter().try_for_each(|r| sink.write(r))
}

/// Reads a results file, rejecting records from other schema versions.
pub fn read_records(path: &Path) -> Result<Vec<RolloutRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RolloutRecord = serde_json::from_str(&line)?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "line {}: schema version {} (expected {SCHEMA_VERSION})",
                n + 1,
                rec.schema_version
            )));
        }
        out.push(rec);
    }
    Ok(out)
}
