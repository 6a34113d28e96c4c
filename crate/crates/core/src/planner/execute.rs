//! Rolling plans out through the maze dynamics.
//!
//! Actions are recovered from planned rows by inverse dynamics, aiming from
//! the state actually reached at the next planned position, so execution
//! tracks the plan rather than replaying stale actions.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{LoopMode, PlannerConfig};
use super::tdp::{plan, PlanOutput, Problem};
use crate::diffusion::Denoiser;
use crate::env::{MazeEnv, State};
use crate::error::Result;
use crate::guidance::{GuideFunction, StateMask};
use crate::rng::{tags, SeedStream};
use crate::trajectory::{ConditionSet, Trajectory};

pub struct Execution<'a> {
    pub env: &'a MazeEnv,
    pub denoiser: &'a Denoiser,
    pub guide: &'a dyn GuideFunction,
    pub true_guide: &'a dyn GuideFunction,
    pub mask: StateMask,
    pub start: State,
    /// Conditions for a plan starting at the given state.
    pub conditions: &'a (dyn Fn(&State) -> ConditionSet + Sync),
    /// Closed-loop termination test over the states visited so far.
    pub done: &'a (dyn Fn(&[State]) -> bool + Sync),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub states: Vec<State>,
    pub actions: Vec<[f64; 2]>,
    pub plans: usize,
    pub reverse_steps: u64,
    pub candidate_draws: u64,
    pub plan_wall_ms: Vec<f64>,
    pub infeasible_actions: usize,
    pub complete: bool,
    pub error: Option<String>,
}

impl Rollout {
    fn new(start: State) -> Self {
        Self {
            states: vec![start],
            actions: Vec::new(),
            plans: 0,
            reverse_steps: 0,
            candidate_draws: 0,
            plan_wall_ms: Vec::new(),
            infeasible_actions: 0,
            complete: true,
            error: None,
        }
    }

    /// Environment steps taken.
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    fn record(&mut self, out: &PlanOutput, ms: f64) {
        self.plans += 1;
        self.reverse_steps += out.reverse_steps;
        self.candidate_draws += out.candidate_draws;
        self.plan_wall_ms.push(ms);
    }

    fn advance(&mut self, env: &MazeEnv, target: &[f64]) {
        let s = *self.states.last().expect("rollout has a start");
        let next = [target[0], target[1], target.get(2).copied().unwrap_or(0.0), target.get(3).copied().unwrap_or(0.0)];
        let inv = env.inverse_dynamics(&s, &next);
        if !inv.feasible {
            self.infeasible_actions += 1;
        }
        self.actions.push(inv.action);
        self.states.push(env.step(&s, inv.action));
    }
}

fn timed_plan(problem: &Problem, cfg: &PlannerConfig, seeds: &SeedStream) -> (Result<PlanOutput>, f64) {
    let t0 = Instant::now();
    let out = plan(problem, cfg, seeds);
    (out, t0.elapsed().as_secs_f64() * 1e3)
}

/// Open loop: one plan, followed for `min(horizon, t_max)` steps (the last
/// planned row is held). Closed loop: replan from the current state, execute
/// the next `replan_every` planned rows, repeat until `done` or `t_max`.
pub fn execute(exec: &Execution, cfg: &PlannerConfig, seeds: &SeedStream) -> Result<(Rollout, Option<Trajectory>)> {
    let mut rollout = Rollout::new(exec.start);
    let problem_at = |s: &State| Problem {
        denoiser: exec.denoiser,
        guide: exec.guide,
        true_guide: exec.true_guide,
        conditions: (exec.conditions)(s),
        mask: exec.mask.clone(),
    };
    match cfg.loop_mode {
        LoopMode::Open => {
            let (out, ms) = timed_plan(&problem_at(&exec.start), cfg, seeds);
            let out = out?;
            rollout.record(&out, ms);
            let traj = out.selected;
            let h = traj.horizon();
            for t in 0..h.min(cfg.t_max) {
                rollout.advance(exec.env, traj.row((t + 1).min(h - 1)));
            }
            Ok((rollout, Some(traj)))
        }
        LoopMode::Closed => {
            let stream = seeds.derive(tags::REPLAN);
            let mut last = None;
            let mut replans = 0u64;
            while rollout.steps() < cfg.t_max && !(exec.done)(&rollout.states) {
                let s = *rollout.states.last().expect("nonempty");
                let (out, ms) = timed_plan(&problem_at(&s), cfg, &stream.derive(replans));
                replans += 1;
                match out {
                    Ok(out) => {
                        rollout.record(&out, ms);
                        let traj = out.selected;
                        let h = traj.horizon();
                        for k in 1..=cfg.replan_every {
                            if rollout.steps() >= cfg.t_max || (k > 1 && (exec.done)(&rollout.states)) {
                                break;
                            }
                            rollout.advance(exec.env, traj.row(k.min(h - 1)));
                        }
                        last = Some(traj);
                    }
                    Err(e) => {
                        log::warn!("replanning failed after {} steps: {e}", rollout.steps());
                        rollout.complete = false;
                        rollout.error = Some(e.to_string());
                        break;
                    }
                }
            }
            Ok((rollout, last))
        }
    }
}
