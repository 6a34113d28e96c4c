//! The tree planner, its ablations, and plan execution.

pub mod config;
pub mod execute;
pub mod tdp;
pub mod tree;

pub use config::{BranchSitePolicy, LoopMode, PgMode, PlannerConfig, Variant};
pub use execute::{execute, Execution, Rollout};
pub use tdp::{leaf_evaluation, parent_branching, plan, probe_mask, subtree_expansion, PlanOutput, Problem, PROBE_SAMPLES};
pub use tree::{argmax_first, ChildLeaf, LeafRecord, ParentLeaf, TrajectoryTree};
