//! Point-mass double integrator in a grid maze.
//!
//! Cell `(r, c)` covers `x in [c, c+1) * cell`, `y in [r, r+1) * cell`; row 0
//! is the first line of the ASCII map. States are `(x, y, vx, vy)`.
//!
//! One step: clip the action to `max_accel` in norm, update velocity and clip
//! it to `max_speed`, then move along x and along y in turn. A move that
//! would enter a wall cell (or leave the grid) stops just inside the current
//! cell and zeroes that velocity component. `max_speed * dt` is kept below
//! one cell so a step never skips over a wall.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type State = [f64; 4];
pub type Cell = (usize, usize);

/// Gap kept between a projected position and the wall it hit, in cells.
const WALL_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub cell_size: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_accel: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            cell_size: 1.0,
            dt: 0.1,
            max_speed: 4.0,
            max_accel: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MazeEnv {
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    dynamics: Dynamics,
    starts: Vec<Cell>,
    goals: Vec<Cell>,
    golds: Vec<Cell>,
}

/// Result of inverting one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseAction {
    pub action: [f64; 2],
    /// False when the exact action had to be clipped.
    pub feasible: bool,
}

fn clip_norm(v: [f64; 2], max: f64) -> ([f64; 2], bool) {
    let n = v[0].hypot(v[1]);
    if n > max {
        let k = max / n;
        ([v[0] * k, v[1] * k], true)
    } else {
        (v, false)
    }
}

impl MazeEnv {
    /// Parses an ASCII map: `#` wall, `.` free, `S` start region, `G` goal
    /// region, `*` gold. Marked cells are free.
    pub fn from_ascii(map: &str, dynamics: Dynamics) -> Result<Self> {
        let lines: Vec<&str> = map
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        let rows = lines.len();
        let cols = lines.first().map_or(0, |l| l.chars().count());
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("empty maze map"));
        }
        let mut env = Self {
            rows,
            cols,
            walls: vec![false; rows * cols],
            dynamics,
            starts: Vec::new(),
            goals: Vec::new(),
            golds: Vec::new(),
        };
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::invalid(format!("map row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => env.walls[r * cols + c] = true,
                    '.' => {}
                    'S' => env.starts.push((r, c)),
                    'G' => env.goals.push((r, c)),
                    '*' => env.golds.push((r, c)),
                    other => {
                        return Err(Error::invalid(format!("unknown map symbol `{other}`")))
                    }
                }
            }
        }
        env.check_dynamics()?;
        Ok(env)
    }

    fn check_dynamics(&self) -> Result<()> {
        let d = &self.dynamics;
        if !(d.dt > 0.0 && d.max_speed > 0.0 && d.max_accel > 0.0 && d.cell_size > 0.0) {
            return Err(Error::invalid("dt, speed, acceleration and cell size must be positive"));
        }
        if d.max_speed * d.dt >= d.cell_size {
            return Err(Error::invalid("max_speed * dt must stay below one cell"));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn start_cells(&self) -> &[Cell] {
        &self.starts
    }

    pub fn goal_cells(&self) -> &[Cell] {
        &self.goals
    }

    pub fn gold_cells(&self) -> &[Cell] {
        &self.golds
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls[cell.0 * self.cols + cell.1]
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .filter(|&cell| !self.is_wall(cell))
            .collect()
    }

    /// Cell containing a position, or `None` outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<Cell> {
        let cs = self.dynamics.cell_size;
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (c, r) = ((x / cs).floor() as usize, (y / cs).floor() as usize);
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    pub fn is_free(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some_and(|c| !self.is_wall(c))
    }

    pub fn cell_center(&self, cell: Cell) -> [f64; 2] {
        let cs = self.dynamics.cell_size;
        [(cell.1 as f64 + 0.5) * cs, (cell.0 as f64 + 0.5) * cs]
    }

    pub fn step(&self, s: &State, action: [f64; 2]) -> State {
        let d = &self.dynamics;
        let (a, _) = clip_norm(action, d.max_accel);
        let (v, _) = clip_norm([s[2] + a[0] * d.dt, s[3] + a[1] * d.dt], d.max_speed);
        let mut out = [s[0], s[1], v[0], v[1]];
        let gap = WALL_GAP * d.cell_size;
        let nx = s[0] + v[0] * d.dt;
        if self.is_free(nx, s[1]) {
            out[0] = nx;
        } else {
            let c = (s[0] / d.cell_size).floor();
            out[0] = if v[0] > 0.0 {
                (c + 1.0) * d.cell_size - gap
            } else {
                c * d.cell_size + gap
            };
            out[2] = 0.0;
        }
        let ny = s[1] + v[1] * d.dt;
        if self.is_free(out[0], ny) {
            out[1] = ny;
        } else {
            let r = (s[1] / d.cell_size).floor();
            out[1] = if v[1] > 0.0 {
                (r + 1.0) * d.cell_size - gap
            } else {
                r * d.cell_size + gap
            };
            out[3] = 0.0;
        }
        out
    }

    /// Action that moves `s` to the position of `next`, clipped to the
    /// actuator limits. Velocity of `next` is implied by the position change.
    pub fn inverse_dynamics(&self, s: &State, next: &State) -> InverseAction {
        let d = &self.dynamics;
        let want = [
            ((next[0] - s[0]) / d.dt - s[2]) / d.dt,
            ((next[1] - s[1]) / d.dt - s[3]) / d.dt,
        ];
        let (action, clipped) = clip_norm(want, d.max_accel);
        let v = [s[2] + action[0] * d.dt, s[3] + action[1] * d.dt];
        let too_fast = v[0].hypot(v[1]) > d.max_speed * (1.0 + 1e-12);
        let feasible = !clipped && !too_fast;
        if !feasible {
            log::debug!("infeasible transition, clipped action {action:?}");
        }
        InverseAction { action, feasible }
    }

    /// Breadth-first shortest path over 4-connected free cells, inclusive of
    /// both ends.
    pub fn shortest_path(&self, from: Cell, to: Cell) -> Option<Vec<Cell>> {
        if self.is_wall(from) || self.is_wall(to) {
            return None;
        }
        let idx = |c: Cell| c.0 * self.cols + c.1;
        let mut prev = vec![usize::MAX; self.rows * self.cols];
        let mut queue = VecDeque::from([from]);
        prev[idx(from)] = idx(from);
        while let Some(cur) = queue.pop_front() {
            if cur == to {
                let mut path = vec![to];
                let mut k = idx(to);
                while k != idx(from) {
                    k = prev[k];
                    path.push((k / self.cols, k % self.cols));
                }
                path.reverse();
                return Some(path);
            }
            let (r, c) = cur;
            let mut next = Vec::with_capacity(4);
            if r > 0 {
                next.push((r - 1, c));
            }
            if r + 1 < self.rows {
                next.push((r + 1, c));
            }
            if c > 0 {
                next.push((r, c - 1));
            }
            if c + 1 < self.cols {
                next.push((r, c + 1));
            }
            for n in next {
                if !self.is_wall(n) && prev[idx(n)] == usize::MAX {
                    prev[idx(n)] = idx(cur);
                    queue.push_back(n);
                }
            }
        }
        None
    }

    /// Whether the straight segment `a -> b` keeps `clearance` (in length
    /// units) from every wall, checked on a fine grid of samples.
    pub fn segment_clear(&self, a: [f64; 2], b: [f64; 2], clearance: f64) -> bool {
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = ((len / (0.05 * self.dynamics.cell_size)).ceil() as usize).max(1);
        let offsets = [
            [0.0, 0.0],
            [clearance, clearance],
            [clearance, -clearance],
            [-clearance, clearance],
            [-clearance, -clearance],
        ];
        (0..=n).all(|k| {
            let t = k as f64 / n as f64;
            let p = [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
            offsets.iter().all(|o| self.is_free(p[0] + o[0], p[1] + o[1]))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROOM: &str = "#####\n#...#\n#...#\n#####\n";

    fn env() -> MazeEnv {
        MazeEnv::from_ascii(ROOM, Dynamics::default()).unwrap()
    }

    #[test]
    fn rest_is_a_fixed_point() {
        let e = env();
        let s = [2.5, 1.5, 0.0, 0.0];
        assert_eq!(e.step(&s, [0.0, 0.0]), s);
    }

    #[test]
    fn free_space_integrator() {
        let e = env();
        let s = [2.0, 1.8, 0.5, -0.2];
        let a = [3.0, 1.0];
        let n = e.step(&s, a);
        let (vx, vy) = (0.5 + 3.0 * 0.1, -0.2 + 1.0 * 0.1);
        let expect = [2.0 + vx * 0.1, 1.8 + vy * 0.1, vx, vy];
        for k in 0..4 {
            assert!((n[k] - expect[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn wall_blocks_motion_along_one_axis() {
        let e = env();
        let s = [3.95, 1.5, 2.0, 1.0];
        let n = e.step(&s, [0.0, 0.0]);
        assert!(n[0] < 4.0 && n[0] > 3.99);
        assert_eq!(n[2], 0.0);
        assert!((n[1] - 1.6).abs() < 1e-12);
        assert_eq!(n[3], 1.0);
        assert!(e.is_free(n[0], n[1]));
    }

    #[test]
    fn inverse_dynamics_round_trip() {
        let e = env();
        let s = [2.0, 1.8, 0.5, -0.2];
        let a = [3.0, 1.0];
        let inv = e.inverse_dynamics(&s, &e.step(&s, a));
        assert!(inv.feasible);
        assert!((inv.action[0] - a[0]).abs() < 1e-9 && (inv.action[1] - a[1]).abs() < 1e-9);
        let rest = [2.0, 2.0, 0.0, 0.0];
        assert_eq!(e.inverse_dynamics(&rest, &rest).action, [0.0, 0.0]);
        let jump = e.inverse_dynamics(&rest, &[3.0, 2.0, 0.0, 0.0]);
        assert!(!jump.feasible);
        assert!((jump.action[0].hypot(jump.action[1]) - e.dynamics().max_accel).abs() < 1e-9);
    }

    #[test]
    fn parses_regions_and_rejects_garbage() {
        let e = MazeEnv::from_ascii("#####\n#S*G#\n#####\n", Dynamics::default()).unwrap();
        assert_eq!(e.start_cells(), &[(1, 1)]);
        assert_eq!(e.gold_cells(), &[(1, 2)]);
        assert_eq!(e.goal_cells(), &[(1, 3)]);
        assert!(MazeEnv::from_ascii("#x#\n", Dynamics::default()).is_err());
        let fast = Dynamics {
            max_speed: 20.0,
            ..Dynamics::default()
        };
        assert!(MazeEnv::from_ascii(ROOM, fast).is_err());
    }

    #[test]
    fn bfs_finds_shortest_route() {
        let e = MazeEnv::from_ascii("#####\n#..##\n##..#\n#####\n", Dynamics::default()).unwrap();
        let p = e.shortest_path((1, 1), (2, 3)).unwrap();
        assert_eq!(p, vec![(1, 1), (1, 2), (2, 2), (2, 3)]);
        assert!(e.shortest_path((1, 1), (0, 0)).is_none());
    }
}
