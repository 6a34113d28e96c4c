//! Tree-guided diffusion planning over exact score models.
//!
//! The crate is organised bottom-up:
//!
//! * [`schedule`], [`diffusion`]: noise schedules and the guided DDPM chain.
//! * [`score`]: closed-form score models (Gaussian mixture, linear subspace,
//!   empirical demo set).
//! * [`guidance`]: guide functions, state decomposition, particle and
//!   gradient guidance.
//! * [`planner`], [`baselines`]: the tree planner, its ablations and the
//!   sampling baselines, plus closed/open loop execution.
//! * [`env`]: point-mass maze, demo generation and task guides.
//! * [`prop1`]: subspace experiment contrasting cold and warm starts.
//! * [`harness`]: metrics, experiment grids, result files and reports.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod diffusion;
pub mod env;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod par;
pub mod planner;
pub mod prop1;
pub mod rng;
pub mod schedule;
pub mod score;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::{ConditionSet, Shape, Trajectory};
