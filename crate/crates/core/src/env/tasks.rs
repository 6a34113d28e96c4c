//! Task definitions and their guide functions. Guides read positions from
//! channels 0 and 1 of every row and ignore the rest.

use serde::{Deserialize, Serialize};

use super::maze::State;
use crate::guidance::GuideFunction;
use crate::trajectory::{ConditionSet, Trajectory};

pub const GOLD_THRESHOLD: f64 = 0.3;
pub const PLACEMENT_THRESHOLD: f64 = 0.4;
pub const MULTIGOAL_THRESHOLD: f64 = 0.1;
pub const PLACEMENT_WEIGHTS: [f64; 3] = [1.0, 1.5, 2.0];
pub const MULTIGOAL_HEIGHTS: [f64; 4] = [4.0, 2.0, 0.5, 0.25];
pub const MULTIGOAL_WIDTHS: [f64; 4] = [0.05, 0.15, 0.2, 0.25];

fn dist(a: &[f64], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn sq_dist(a: &[f64], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Conditions pinning row 0 to `start` (all channels present in the
/// trajectory) and, if given, the last row's position to `goal`.
pub fn endpoint_conditions(start: &State, goal: Option<[f64; 2]>, horizon: usize, channels: usize) -> ConditionSet {
    let mut c = ConditionSet::new();
    c.insert_row(0, &start[..channels.min(4)]).expect("fresh set");
    if let Some(g) = goal {
        if horizon > 1 {
            c.insert(horizon - 1, 0, g[0]).expect("fresh entry");
            c.insert(horizon - 1, 1, g[1]).expect("fresh entry");
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldTask {
    pub start: State,
    pub goal: [f64; 2],
    pub gold: [f64; 2],
    pub threshold: f64,
}

/// Sum of distances to the gold, negated. Smooth except exactly at the gold,
/// where the gradient of that row is taken as zero.
#[derive(Debug, Clone)]
pub struct GoldGuide {
    pub gold: [f64; 2],
}

/// Negated distance of the closest row to the gold. Selection only.
#[derive(Debug, Clone)]
pub struct GoldTrue {
    pub gold: [f64; 2],
}

pub fn gold_guidance(task: &GoldTask) -> GoldGuide {
    GoldGuide { gold: task.gold }
}

pub fn gold_true(task: &GoldTask) -> GoldTrue {
    GoldTrue { gold: task.gold }
}

impl GuideFunction for GoldGuide {
    fn name(&self) -> &str {
        "gold"
    }

    fn value(&self, traj: &Trajectory) -> f64 {
        -traj.rows().map(|r| dist(r, self.gold)).sum::<f64>()
    }

    fn analytic_gradient(&self, traj: &Trajectory) -> Option<Vec<f64>> {
        let w = traj.channels();
        let mut g = vec![0.0; traj.as_slice().len()];
        for (t, r) in traj.rows().enumerate() {
            let d = dist(r, self.gold);
            if d > 0.0 {
                g[t * w] = -(r[0] - self.gold[0]) / d;
                g[t * w + 1] = -(r[1] - self.gold[1]) / d;
            }
        }
        Some(g)
    }
}

impl GuideFunction for GoldTrue {
    fn name(&self) -> &str {
        "gold_true"
    }

    fn value(&self, traj: &Trajectory) -> f64 {
        -traj
            .rows()
            .map(|r| dist(r, self.gold))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementField {
    /// Wide Gaussian peak at the local target, narrow higher peak at the
    /// global target, narrow dip at the middle point between them.
    #[default]
    Peaks,
    /// `-c1 |s - local| - c2 |s - mid| + c3 |s - global|`, taken literally.
    SignedDistance,
}

/// Multi-peak placement field. The middle point sits on the segment between
/// the targets with `|mid - local| : |mid - global| = 3 : 1`; each peak width
/// is half its target's distance to the middle point, which makes the local
/// peak three times wider than the global one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementTask {
    pub start: State,
    pub local: [f64; 2],
    pub global: [f64; 2],
    pub mid: [f64; 2],
    pub weights: [f64; 3],
    pub local_width: f64,
    pub global_width: f64,
    pub threshold: f64,
    pub field: PlacementField,
}

impl PlacementTask {
    pub fn new(start: State, local: [f64; 2], global: [f64; 2], weights: [f64; 3], field: PlacementField) -> Self {
        let mid = [
            global[0] + 0.25 * (local[0] - global[0]),
            global[1] + 0.25 * (local[1] - global[1]),
        ];
        let dl = (mid[0] - local[0]).hypot(mid[1] - local[1]);
        let dg = (mid[0] - global[0]).hypot(mid[1] - global[1]);
        Self {
            start,
            local,
            global,
            mid,
            weights,
            local_width: 0.5 * dl,
            global_width: 0.5 * dg,
            threshold: PLACEMENT_THRESHOLD,
            field,
        }
    }

    /// Field value and gradient at one position.
    pub fn row_value(&self, p: &[f64]) -> (f64, [f64; 2]) {
        let [c1, c2, c3] = self.weights;
        match self.field {
            PlacementField::Peaks => {
                let mut v = 0.0;
                let mut g = [0.0; 2];
                for (center, width, weight) in [
                    (self.local, self.local_width, c1),
                    (self.mid, self.global_width, -c2),
                    (self.global, self.global_width, c3),
                ] {
                    let e = weight * (-sq_dist(p, center) / (2.0 * width * width)).exp();
                    v += e;
                    g[0] -= e * (p[0] - center[0]) / (width * width);
                    g[1] -= e * (p[1] - center[1]) / (width * width);
                }
                (v, g)
            }
            PlacementField::SignedDistance => {
                let mut v = 0.0;
                let mut g = [0.0; 2];
                for (center, weight) in [(self.local, -c1), (self.mid, -c2), (self.global, c3)] {
                    let d = dist(p, center);
                    v += weight * d;
                    if d > 0.0 {
                        g[0] += weight * (p[0] - center[0]) / d;
                        g[1] += weight * (p[1] - center[1]) / d;
                    }
                }
                (v, g)
            }
        }
    }

    pub fn guide(&self) -> PlacementGuide {
        PlacementGuide { task: self.clone() }
    }

    pub fn true_guide(&self) -> PlacementTrue {
        PlacementTrue { task: self.clone() }
    }

    pub fn at_global(&self, p: &[f64]) -> bool {
        dist(p, self.global) <= self.threshold
    }

    pub fn at_local(&self, p: &[f64]) -> bool {
        dist(p, self.local) <= self.threshold
    }
}

/// Field summed over all rows.
#[derive(Debug, Clone)]
pub struct PlacementGuide {
    task: PlacementTask,
}

impl GuideFunction for PlacementGuide {
    fn name(&self) -> &str {
        "placement"
    }

    fn value(&self, traj: &Trajectory) -> f64 {
        traj.rows().map(|r| self.task.row_value(r).0).sum()
    }

    fn analytic_gradient(&self, traj: &Trajectory) -> Option<Vec<f64>> {
        let w = traj.channels();
        let mut g = vec![0.0; traj.as_slice().len()];
        for (t, r) in traj.rows().enumerate() {
            let (_, d) = self.task.row_value(r);
            g[t * w] = d[0];
            g[t * w + 1] = d[1];
        }
        Some(g)
    }
}

/// Field value at the final row: where the object ends up.
#[derive(Debug, Clone)]
pub struct PlacementTrue {
    task: PlacementTask,
}

impl GuideFunction for PlacementTrue {
    fn name(&self) -> &str {
        "placement_true"
    }

    fn value(&self, traj: &Trajectory) -> f64 {
        self.task.row_value(traj.row(traj.horizon() - 1)).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiGoalTask {
    pub start: State,
    pub goals: Vec<[f64; 2]>,
    pub heights: Vec<f64>,
    pub widths: Vec<f64>,
    /// Goal indices from highest to lowest priority.
    pub priority: Vec<usize>,
    pub threshold: f64,
    pub t_max: usize,
}

impl MultiGoalTask {
    /// Goals with the default height/width table, prioritized in order.
    pub fn with_defaults(start: State, goals: Vec<[f64; 2]>, t_max: usize) -> Self {
        let n = goals.len();
        Self {
            start,
            heights: MULTIGOAL_HEIGHTS.iter().copied().cycle().take(n).collect(),
            widths: MULTIGOAL_WIDTHS.iter().copied().cycle().take(n).collect(),
            priority: (0..n).collect(),
            goals,
            threshold: MULTIGOAL_THRESHOLD,
            t_max,
        }
    }

    pub fn guide(&self) -> MultiGoalGuide {
        MultiGoalGuide { task: self.clone() }
    }
}

/// `sum_g h_g exp(-sum_i |s_i - s_g|^2 / sigma_g^2)`.
#[derive(Debug, Clone)]
pub struct MultiGoalGuide {
    task: MultiGoalTask,
}

impl MultiGoalGuide {
    fn exponents(&self, traj: &Trajectory) -> Vec<f64> {
        self.task
            .goals
            .iter()
            .zip(&self.task.widths)
            .map(|(g, s)| -traj.rows().map(|r| sq_dist(r, *g)).sum::<f64>() / (s * s))
            .collect()
    }
}

impl GuideFunction for MultiGoalGuide {
    fn name(&self) -> &str {
        "multigoal"
    }

    fn value(&self, traj: &Trajectory) -> f64 {
        self.exponents(traj)
            .iter()
            .zip(&self.task.heights)
            .map(|(e, h)| h * e.exp())
            .sum()
    }

    fn analytic_gradient(&self, traj: &Trajectory) -> Option<Vec<f64>> {
        let w = traj.channels();
        let mut g = vec![0.0; traj.as_slice().len()];
        for (k, e) in self.exponents(traj).iter().enumerate() {
            let term = self.task.heights[k] * e.exp();
            if term == 0.0 {
                continue;
            }
            let s2 = self.task.widths[k].powi(2);
            let goal = self.task.goals[k];
            for (t, r) in traj.rows().enumerate() {
                g[t * w] -= term * 2.0 * (r[0] - goal[0]) / s2;
                g[t * w + 1] -= term * 2.0 * (r[1] - goal[1]) / s2;
            }
        }
        Some(g)
    }
}
