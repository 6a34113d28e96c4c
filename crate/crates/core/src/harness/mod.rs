//! Metrics, experiment grids, result files and reports.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod records;
pub mod report;
pub mod tasks;

pub use config::{leaf_split, ExperimentConfig, SeedList};
pub use experiment::{effective_workers, run_cell, run_experiment, ExperimentSummary, DETERMINISTIC_ENV};
pub use metrics::{goal_metrics, pairwise_distance, sequence_match, GoalMetrics};
pub use records::{read_records, write_records, RecordSink, RolloutRecord, SCHEMA_VERSION};
pub use report::{render_table, summarize, write_csv, ReportRow, Stat};
pub use tasks::{GoalSpec, GoldSpec, ModelSpec, MultiGoalSpec, PlacementSpec, PreparedTask, Prior, TaskSpec};
