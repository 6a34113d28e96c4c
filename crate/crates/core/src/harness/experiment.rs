//! Grid execution: tasks × variants × budgets × seeds.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use super::config::{leaf_split, ExperimentConfig};
use super::metrics::{goal_metrics, sequence_match};
use super::records::{RecordSink, RolloutRecord, SCHEMA_VERSION};
use super::tasks::PreparedTask;
use crate::error::Result;
use crate::planner::{execute, Execution, PlannerConfig, Variant};
use crate::rng::SeedStream;

/// Environment variable that forces a single worker.
pub const DETERMINISTIC_ENV: &str = "TDP_DETERMINISTIC";

/// Worker count after applying [`DETERMINISTIC_ENV`]; zero means one per
/// available core.
pub fn effective_workers(requested: usize) -> usize {
    if std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1") {
        return 1;
    }
    if requested == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        requested
    }
}

/// Runs one grid cell. Planner errors are recorded in the returned record
/// rather than propagated.
pub fn run_cell(
    task: &PreparedTask,
    experiment: &str,
    base: &PlannerConfig,
    variant: Variant,
    budget: usize,
    seed: u64,
) -> Result<RolloutRecord> {
    let (samples, children) = leaf_split(variant, budget)?;
    let cfg = PlannerConfig {
        variant,
        samples,
        children,
        seed,
        ..base.clone()
    };
    let seeds = SeedStream::new(seed);
    let denoiser = task.denoiser.clone();
    let start = task.start_for(&seeds);
    let conditions = |s: &crate::env::State| task.conditions(s);
    let done = |states: &[crate::env::State]| task.done(states);
    let exec = Execution {
        env: &task.env,
        denoiser: &denoiser,
        guide: task.guide(),
        true_guide: task.true_guide(),
        mask: task.mask().clone(),
        start,
        conditions: &conditions,
        done: &done,
    };
    let t0 = Instant::now();
    let outcome = execute(&exec, &cfg, &seeds);
    let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    let goals = task.goal_spec();
    let mut rec = RolloutRecord {
        schema_version: SCHEMA_VERSION,
        experiment: experiment.to_string(),
        task: task.spec.id().to_string(),
        variant,
        budget,
        seed,
        states: vec![start],
        actions: Vec::new(),
        first_visits: vec![None; goals.goals.len()],
        goals_found: vec![false; goals.goals.len()],
        found: 0,
        timesteps_per_goal: None,
        sequence_match: None,
        success: false,
        true_score: None,
        plans: 0,
        reverse_steps: 0,
        candidate_draws: 0,
        infeasible_actions: 0,
        complete: false,
        error: None,
        wall_ms,
        plan_wall_ms: Vec::new(),
    };
    match outcome {
        Ok((rollout, last)) => {
            let m = goal_metrics(&rollout.states, rollout.steps(), &goals.goals, goals.threshold);
            rec.sequence_match = match &goals.priority {
                Some(p) => Some(sequence_match(&m.visit_order, p)?),
                None => None,
            };
            rec.goals_found = m.first_visits.iter().map(Option::is_some).collect();
            rec.first_visits = m.first_visits;
            rec.found = m.found;
            rec.timesteps_per_goal = m.timesteps_per_goal;
            rec.success = task.success(&rollout.states);
            rec.true_score = last.map(|t| task.true_guide().value(&t)).filter(|v| v.is_finite());
            rec.plans = rollout.plans;
            rec.reverse_steps = rollout.reverse_steps;
            rec.candidate_draws = rollout.candidate_draws;
            rec.infeasible_actions = rollout.infeasible_actions;
            rec.complete = rollout.complete;
            rec.error = rollout.error;
            rec.plan_wall_ms = rollout.plan_wall_ms;
            rec.states = rollout.states;
            rec.actions = rollout.actions;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    Ok(rec)
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub output: PathBuf,
    pub records: usize,
    /// `variant/budget/seed: message` for every cell that did not complete.
    pub failures: Vec<String>,
}

impl ExperimentSummary {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs the whole grid, writing one record per cell to `cfg.output` in
/// completion order. Cell failures are logged and counted; the run goes on.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let task = PreparedTask::prepare(&cfg.task, cfg.schedule)?;
    let sink = RecordSink::create(&cfg.output)?;
    let mut cells = Vec::new();
    for &v in &cfg.variants {
        for &b in &cfg.budgets {
            for s in cfg.seeds.seeds() {
                cells.push((v, b, s));
            }
        }
    }
    let written = AtomicUsize::new(0);
    let run = |&(v, b, s): &(Variant, usize, u64)| -> Option<String> {
        let rec = match run_cell(&task, &cfg.name, &cfg.planner, v, b, s) {
            Ok(r) => r,
            Err(e) => return Some(format!("{v}/{b}/{s}: {e}")),
        };
        let failure = rec.error.as_ref().map(|e| format!("{v}/{b}/{s}: {e}"));
        if let Err(e) = sink.write(&rec) {
            return Some(format!("{v}/{b}/{s}: writing record: {e}"));
        }
        written.fetch_add(1, Ordering::Relaxed);
        if let Some(f) = &failure {
            log::warn!("cell failed: {f}");
        }
        failure
    };
    let failures: Vec<String> = run_cells(&cells, effective_workers(workers), run)?;
    Ok(ExperimentSummary {
        output: cfg.output.clone(),
        records: written.into_inner(),
        failures,
    })
}

#[cfg(feature = "rayon")]
fn run_cells<F>(cells: &[(Variant, usize, u64)], workers: usize, run: F) -> Result<Vec<String>>
where
    F: Fn(&(Variant, usize, u64)) -> Option<String> + Sync,
{
    use rayon::prelude::*;
    if workers <= 1 {
        return Ok(cells.iter().filter_map(run).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().filter_map(&run).collect()))
}

#[cfg(not(feature = "rayon"))]
fn run_cells<F>(cells: &[(Variant, usize, u64)], _workers: usize, run: F) -> Result<Vec<String>>
where
    F: Fn(&(Variant, usize, u64)) -> Option<String> + Sync,
{
    Ok(cells.iter().filter_map(run).collect())
}
