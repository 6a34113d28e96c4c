//! Demonstration generator: shortest grid path, line-of-sight smoothing,
//! then a waypoint-tracking controller rolled out through the maze dynamics.
//! Each demo row is one environment step; demos that arrive early hold still
//! at the goal until the horizon.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::maze::{Cell, MazeEnv, State};
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedStream};
use crate::trajectory::Trajectory;

/// Channels of a demo row: `x, y, vx, vy`.
pub const STATE_CHANNELS: usize = 4;

/// Controller constants. Braking uses half the actuator limit so the
/// controller never relies on saturated actions to stop.
const SWITCH_RADIUS: f64 = 0.3;
const BRAKE_FRACTION: f64 = 0.5;
const SMOOTHING_CLEARANCE: f64 = 0.2;
const ARRIVAL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "cells")]
pub enum Region {
    AnyFree,
    /// Cells marked `S` in the map.
    MapStarts,
    /// Cells marked `G` in the map.
    MapGoals,
    Cells(Vec<Cell>),
    /// Cells with integer draw weights; equivalent to `Cells` with each cell
    /// repeated `weight` times.
    Weighted(Vec<(Cell, usize)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoSpec {
    pub count: usize,
    pub horizon: usize,
    pub starts: Region,
    pub goals: Region,
    /// Optional intermediate cell region; when set every demo detours through
    /// one cell drawn from it.
    #[serde(default)]
    pub via: Option<Region>,
    /// Uniform jitter of start/goal positions around their cell centres, as a
    /// fraction of the cell size.
    pub jitter: f64,
    /// Goal jitter when it should differ from `jitter`.
    #[serde(default)]
    pub goal_jitter: Option<f64>,
    /// Cruise speed drawn per demo as a fraction of `max_speed`.
    pub speed_range: (f64, f64),
    pub max_retries: usize,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            count: 100,
            horizon: 64,
            starts: Region::AnyFree,
            goals: Region::AnyFree,
            via: None,
            jitter: 0.3,
            goal_jitter: None,
            speed_range: (0.6, 1.0),
            max_retries: 50,
        }
    }
}

fn region_cells(env: &MazeEnv, region: &Region) -> Result<Vec<Cell>> {
    let cells = match region {
        Region::AnyFree => env.free_cells(),
        Region::MapStarts => env.start_cells().to_vec(),
        Region::MapGoals => env.goal_cells().to_vec(),
        Region::Cells(c) => c.clone(),
        Region::Weighted(w) => w
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect(),
    };
    if cells.is_empty() {
        return Err(Error::Demo(format!("region {region:?} has no cells")));
    }
    if let Some(bad) = cells.iter().find(|c| c.0 >= env.rows() || c.1 >= env.cols() || env.is_wall(**c)) {
        return Err(Error::Demo(format!("region cell {bad:?} is not a free cell")));
    }
    Ok(cells)
}

fn jittered(env: &MazeEnv, cell: Cell, jitter: f64, rng: &mut Rng) -> [f64; 2] {
    let c = env.cell_center(cell);
    let j = jitter * env.dynamics().cell_size;
    if j == 0.0 {
        return c;
    }
    [c[0] + rng.random_range(-j..=j), c[1] + rng.random_range(-j..=j)]
}

/// Greedy line-of-sight pruning of a polyline.
pub fn smooth_waypoints(env: &MazeEnv, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    if points.len() <= 2 {
        return points.to_vec();
    }
    let clearance = SMOOTHING_CLEARANCE * env.dynamics().cell_size;
    let mut out = vec![points[0]];
    let mut i = 0;
    while i + 1 < points.len() {
        let mut j = points.len() - 1;
        while j > i + 1 && !env.segment_clear(points[i], points[j], clearance) {
            j -= 1;
        }
        out.push(points[j]);
        i = j;
    }
    out
}

/// Polyline from `start` to `goal` through the centres of the grid path.
/// Each leg is smoothed on its own so the via point is kept.
fn route(env: &MazeEnv, start: [f64; 2], goal: [f64; 2], via: Option<[f64; 2]>) -> Option<Vec<[f64; 2]>> {
    let cell = |p: [f64; 2]| env.cell_of(p[0], p[1]);
    let mut stops = vec![start];
    stops.extend(via);
    stops.push(goal);
    let mut out = vec![start];
    for w in stops.windows(2) {
        let path = env.shortest_path(cell(w[0])?, cell(w[1])?)?;
        let mut pts = vec![w[0]];
        pts.extend(path.iter().skip(1).take(path.len().saturating_sub(2)).map(|&c| env.cell_center(c)));
        pts.push(w[1]);
        pts.dedup();
        out.extend(smooth_waypoints(env, &pts).into_iter().skip(1));
    }
    out.dedup();
    Some(out)
}

/// Rolls the tracking controller along `waypoints` for `horizon` rows.
/// Returns the states, the actions applied after each row, and whether the
/// final waypoint was reached.
pub fn track_waypoints(
    env: &MazeEnv,
    start: State,
    waypoints: &[[f64; 2]],
    cruise: f64,
    horizon: usize,
) -> (Vec<State>, Vec<[f64; 2]>, bool) {
    let d = *env.dynamics();
    let brake = BRAKE_FRACTION * d.max_accel;
    let mut states = vec![start];
    let mut actions = Vec::with_capacity(horizon);
    let mut target = 1.min(waypoints.len() - 1);
    let mut s = start;
    let tail_len = |k: usize| -> f64 {
        waypoints[k..]
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    };
    let last = waypoints.len() - 1;
    for _ in 1..horizon {
        let mut to = [waypoints[target][0] - s[0], waypoints[target][1] - s[1]];
        let mut dist = to[0].hypot(to[1]);
        while target < last && dist < SWITCH_RADIUS * d.cell_size {
            target += 1;
            to = [waypoints[target][0] - s[0], waypoints[target][1] - s[1]];
            dist = to[0].hypot(to[1]);
        }
        let remaining = dist + tail_len(target);
        let speed = cruise.min((2.0 * brake * remaining).sqrt()).min(remaining / d.dt);
        let v_des = if dist > 0.0 {
            [to[0] / dist * speed, to[1] / dist * speed]
        } else {
            [0.0, 0.0]
        };
        let mut a = [(v_des[0] - s[2]) / d.dt, (v_des[1] - s[3]) / d.dt];
        let n = a[0].hypot(a[1]);
        if n > d.max_accel {
            a = [a[0] * d.max_accel / n, a[1] * d.max_accel / n];
        }
        s = env.step(&s, a);
        actions.push(a);
        states.push(s);
    }
    actions.push([0.0, 0.0]);
    let end = waypoints[last];
    let fin = states[states.len() - 1];
    let reached = (fin[0] - end[0]).hypot(fin[1] - end[1]) <= ARRIVAL_TOLERANCE * d.cell_size;
    (states, actions, reached)
}

fn to_trajectory(states: &[State], actions: &[[f64; 2]]) -> Result<Trajectory> {
    let values = states.iter().flat_map(|s| s.iter().copied()).collect();
    Trajectory::new(states.len(), STATE_CHANNELS, values)?
        .with_actions(actions.iter().map(|a| a.to_vec()).collect())
}

/// One demo from `start` to `goal` (optionally through `via`) at rest at
/// both ends. `None` if the goal is unreachable or not reached in time.
pub fn demo_between(
    env: &MazeEnv,
    start: [f64; 2],
    goal: [f64; 2],
    via: Option<[f64; 2]>,
    cruise: f64,
    horizon: usize,
) -> Option<Trajectory> {
    let waypoints = route(env, start, goal, via)?;
    let (states, actions, reached) =
        track_waypoints(env, [start[0], start[1], 0.0, 0.0], &waypoints, cruise, horizon);
    if !reached {
        return None;
    }
    to_trajectory(&states, &actions).ok()
}

pub fn generate_demos(env: &MazeEnv, spec: &DemoSpec, seeds: &SeedStream) -> Result<Vec<Trajectory>> {
    if spec.count == 0 || spec.horizon == 0 {
        return Err(Error::invalid("demo count and horizon must be positive"));
    }
    let starts = region_cells(env, &spec.starts)?;
    let goals = region_cells(env, &spec.goals)?;
    let vias = spec.via.as_ref().map(|r| region_cells(env, r)).transpose()?;
    let (lo, hi) = spec.speed_range;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::invalid("speed range must satisfy 0 < lo <= hi <= 1"));
    }
    let max_speed = env.dynamics().max_speed;
    let mut demos = Vec::with_capacity(spec.count);
    for k in 0..spec.count {
        let mut rng = seeds.element(k).rng();
        let mut made = None;
        for _ in 0..=spec.max_retries {
            let s = jittered(env, *starts.choose(&mut rng).expect("nonempty"), spec.jitter, &mut rng);
            let g = jittered(
                env,
                *goals.choose(&mut rng).expect("nonempty"),
                spec.goal_jitter.unwrap_or(spec.jitter),
                &mut rng,
            );
            let v = vias
                .as_ref()
                .map(|cells| env.cell_center(*cells.choose(&mut rng).expect("nonempty")));
            let cruise = max_speed * rng.random_range(lo..=hi);
            if let Some(d) = demo_between(env, s, g, v, cruise, spec.horizon) {
                made = Some(d);
                break;
            }
        }
        demos.push(made.ok_or_else(|| {
            Error::Demo(format!("demo {k}: no reachable pair within {} retries", spec.max_retries))
        })?);
    }
    Ok(demos)
}
