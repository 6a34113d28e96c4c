//! Task specifications and their prepared (demos fitted, guides built)
//! instances.

use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffusion::Denoiser;
use crate::env::{
    endpoint_conditions, generate_demos, gold_guidance, gold_true, maps, Cell, DemoSpec, Dynamics, GoldGuide, GoldTask,
    GoldTrue, MazeEnv, MultiGoalGuide, MultiGoalTask, PlacementField, PlacementGuide, PlacementTask, PlacementTrue,
    State, GOLD_THRESHOLD, MULTIGOAL_THRESHOLD, PLACEMENT_THRESHOLD, PLACEMENT_WEIGHTS, STATE_CHANNELS,
};
use crate::error::{Error, Result};
use crate::guidance::{GuideFunction, StateMask, DEFAULT_DECOMPOSITION_EPS};
use crate::planner::probe_mask;
use crate::rng::{tags, SeedStream};
use crate::schedule::{NoiseSchedule, ScheduleKind};
use crate::score::{fit_gaussian, load_demo_set, EmpiricalScoreModel, ScoreModel, DEFAULT_KERNEL_FLOOR};
use crate::trajectory::{ConditionSet, Shape, Trajectory};

fn default_floor() -> f64 {
    DEFAULT_KERNEL_FLOOR
}

/// Environment, demonstrations and diffusion model shared by every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Built-in map name (`open_room`, `u_maze`, `large_maze`).
    pub map: String,
    #[serde(default)]
    pub dynamics: Dynamics,
    pub demos: DemoSpec,
    #[serde(default)]
    pub demo_seed: u64,
    /// Load demos from this manifest instead of generating them. Relative
    /// paths resolve against the working directory.
    #[serde(default)]
    pub demo_set: Option<PathBuf>,
    pub diffusion_steps: usize,
    #[serde(default)]
    pub prior: Prior,
}

impl ModelSpec {
    pub fn env(&self) -> Result<MazeEnv> {
        env_for(self)
    }

    pub fn generate_demos(&self, env: &MazeEnv) -> Result<Vec<Trajectory>> {
        generate_demos(env, &self.demos, &SeedStream::new(self.demo_seed).derive(tags::DEMOS))
    }

    pub fn fit(&self, demos: &[Trajectory]) -> Result<Arc<dyn ScoreModel>> {
        Ok(match self.prior {
            Prior::Empirical { kernel_floor } => Arc::new(EmpiricalScoreModel::fit(demos, kernel_floor)?),
            Prior::Gaussian { ridge } => Arc::new(fit_gaussian(demos, ridge)?),
        })
    }
}

/// Score model fitted to the demos.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    /// Kernel mixture over the demos themselves.
    Empirical {
        #[serde(default = "default_floor")]
        kernel_floor: f64,
    },
    /// One Gaussian with the demos' mean and covariance.
    Gaussian { ridge: f64 },
}

impl Default for Prior {
    fn default() -> Self {
        Prior::Empirical {
            kernel_floor: DEFAULT_KERNEL_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldSpec {
    pub model: ModelSpec,
    pub start: Cell,
    pub goal: Cell,
    pub gold: [f64; 2],
    /// Per-seed uniform jitter of the start position, in cell sizes.
    #[serde(default)]
    pub start_jitter: f64,
    #[serde(default = "gold_threshold")]
    pub threshold: f64,
}

fn gold_threshold() -> f64 {
    GOLD_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSpec {
    pub model: ModelSpec,
    pub start: Cell,
    pub local: [f64; 2],
    pub global: [f64; 2],
    #[serde(default = "placement_weights")]
    pub weights: [f64; 3],
    #[serde(default)]
    pub field: PlacementField,
    #[serde(default)]
    pub start_jitter: f64,
    #[serde(default = "placement_threshold")]
    pub threshold: f64,
}

fn placement_weights() -> [f64; 3] {
    PLACEMENT_WEIGHTS
}

fn placement_threshold() -> f64 {
    PLACEMENT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiGoalSpec {
    pub model: ModelSpec,
    pub start: Cell,
    /// Goals from highest to lowest priority.
    pub goals: Vec<[f64; 2]>,
    #[serde(default)]
    pub start_jitter: f64,
    #[serde(default = "multigoal_threshold")]
    pub threshold: f64,
}

fn multigoal_threshold() -> f64 {
    MULTIGOAL_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// Reach the map goal, passing a gold position on the way.
    Gold(GoldSpec),
    /// End the plan on the narrow global peak of a two-peak field.
    Placement(PlacementSpec),
    /// Visit prioritized goals in order (closed loop).
    MultiGoal(MultiGoalSpec),
}

impl TaskSpec {
    pub fn id(&self) -> &'static str {
        match self {
            TaskSpec::Gold(_) => "gold",
            TaskSpec::Placement(_) => "placement",
            TaskSpec::MultiGoal(_) => "multi_goal",
        }
    }

    pub fn model(&self) -> &ModelSpec {
        match self {
            TaskSpec::Gold(s) => &s.model,
            TaskSpec::Placement(s) => &s.model,
            TaskSpec::MultiGoal(s) => &s.model,
        }
    }
}

/// A task with its environment, fitted model and guides.
pub struct PreparedTask {
    pub spec: TaskSpec,
    pub env: MazeEnv,
    pub demos: Vec<Trajectory>,
    pub denoiser: Denoiser,
    mask: StateMask,
    kind: Kind,
}

enum Kind {
    Gold {
        task: GoldTask,
        guide: GoldGuide,
        true_guide: GoldTrue,
    },
    Placement {
        task: PlacementTask,
        guide: PlacementGuide,
        true_guide: PlacementTrue,
    },
    MultiGoal {
        task: MultiGoalTask,
        guide: MultiGoalGuide,
    },
}

/// What success means for a task, read off a finished rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub goals: Vec<[f64; 2]>,
    pub threshold: f64,
    pub priority: Option<Vec<usize>>,
}

fn env_for(model: &ModelSpec) -> Result<MazeEnv> {
    let text = maps::by_name(&model.map).ok_or_else(|| Error::Config(format!("unknown map `{}`", model.map)))?;
    MazeEnv::from_ascii(text, model.dynamics)
}

fn center_state(env: &MazeEnv, cell: Cell) -> Result<State> {
    if cell.0 >= env.rows() || cell.1 >= env.cols() || env.is_wall(cell) {
        return Err(Error::Config(format!("cell {cell:?} is not free")));
    }
    let c = env.cell_center(cell);
    Ok([c[0], c[1], 0.0, 0.0])
}

impl PreparedTask {
    pub fn prepare(spec: &TaskSpec, schedule: ScheduleKind) -> Result<Self> {
        let model = spec.model();
        let env = env_for(model)?;
        let demos = match &model.demo_set {
            Some(path) => load_demo_set(path)?,
            None => model.generate_demos(&env)?,
        };
        if let Some(bad) = demos.iter().find(|d| d.shape() != Shape::new(model.demos.horizon, STATE_CHANNELS)) {
            return Err(Error::Config(format!(
                "demo shape {}x{} does not match horizon {} with {STATE_CHANNELS} channels",
                bad.horizon(),
                bad.channels(),
                model.demos.horizon
            )));
        }
        let fitted = model.fit(&demos)?;
        let shape = Shape::new(model.demos.horizon, STATE_CHANNELS);
        let denoiser = Denoiser::new(fitted, NoiseSchedule::new(model.diffusion_steps, schedule)?, shape)?;
        let kind = match spec {
            TaskSpec::Gold(s) => {
                let start = center_state(&env, s.start)?;
                let goal = env.cell_center(s.goal);
                center_state(&env, s.goal)?;
                let task = GoldTask {
                    start,
                    goal,
                    gold: s.gold,
                    threshold: s.threshold,
                };
                Kind::Gold {
                    guide: gold_guidance(&task),
                    true_guide: gold_true(&task),
                    task,
                }
            }
            TaskSpec::Placement(s) => {
                let start = center_state(&env, s.start)?;
                let mut task = PlacementTask::new(start, s.local, s.global, s.weights, s.field);
                task.threshold = s.threshold;
                Kind::Placement {
                    guide: task.guide(),
                    true_guide: task.true_guide(),
                    task,
                }
            }
            TaskSpec::MultiGoal(s) => {
                if s.goals.is_empty() {
                    return Err(Error::Config("multi-goal task needs goals".into()));
                }
                let start = center_state(&env, s.start)?;
                let mut task = MultiGoalTask::with_defaults(start, s.goals.clone(), 0);
                task.threshold = s.threshold;
                Kind::MultiGoal {
                    guide: task.guide(),
                    task,
                }
            }
        };
        let mut prepared = Self {
            spec: spec.clone(),
            env,
            demos,
            denoiser,
            mask: StateMask::all_observation(STATE_CHANNELS),
            kind,
        };
        let conds = prepared.conditions(&prepared.nominal_start());
        prepared.mask = probe_mask(
            &prepared.denoiser,
            prepared.guide(),
            &conds,
            DEFAULT_DECOMPOSITION_EPS,
            &SeedStream::new(model.demo_seed),
        )?;
        prepared.denoiser.reset_counter();
        Ok(prepared)
    }

    pub fn guide(&self) -> &dyn GuideFunction {
        match &self.kind {
            Kind::Gold { guide, .. } => guide,
            Kind::Placement { guide, .. } => guide,
            Kind::MultiGoal { guide, .. } => guide,
        }
    }

    pub fn true_guide(&self) -> &dyn GuideFunction {
        match &self.kind {
            Kind::Gold { true_guide, .. } => true_guide,
            Kind::Placement { true_guide, .. } => true_guide,
            Kind::MultiGoal { guide, .. } => guide,
        }
    }

    /// Nominal start (cell centre, at rest).
    pub fn nominal_start(&self) -> State {
        match &self.kind {
            Kind::Gold { task, .. } => task.start,
            Kind::Placement { task, .. } => task.start,
            Kind::MultiGoal { task, .. } => task.start,
        }
    }

    fn start_jitter(&self) -> f64 {
        match &self.spec {
            TaskSpec::Gold(s) => s.start_jitter,
            TaskSpec::Placement(s) => s.start_jitter,
            TaskSpec::MultiGoal(s) => s.start_jitter,
        }
    }

    /// Start state for a seed: the nominal start plus uniform jitter drawn
    /// from the seed's task stream.
    pub fn start_for(&self, seeds: &SeedStream) -> State {
        let mut s = self.nominal_start();
        let j = self.start_jitter() * self.env.dynamics().cell_size;
        if j > 0.0 {
            let mut rng = seeds.derive(tags::TASK).rng();
            s[0] += rng.random_range(-j..=j);
            s[1] += rng.random_range(-j..=j);
        }
        s
    }

    /// Planning conditions from a given state.
    pub fn conditions(&self, from: &State) -> ConditionSet {
        let shape = self.denoiser.shape();
        let goal = match &self.kind {
            Kind::Gold { task, .. } => Some(task.goal),
            _ => None,
        };
        endpoint_conditions(from, goal, shape.horizon, shape.channels)
    }

    pub fn goal_spec(&self) -> GoalSpec {
        match &self.kind {
            Kind::Gold { task, .. } => GoalSpec {
                goals: vec![task.gold],
                threshold: task.threshold,
                priority: None,
            },
            Kind::Placement { task, .. } => GoalSpec {
                goals: vec![task.global, task.local],
                threshold: task.threshold,
                priority: None,
            },
            Kind::MultiGoal { task, .. } => GoalSpec {
                goals: task.goals.clone(),
                threshold: task.threshold,
                priority: Some(task.priority.clone()),
            },
        }
    }

    /// Task success for the visited states.
    pub fn success(&self, states: &[State]) -> bool {
        let near = |s: &State, g: [f64; 2], th: f64| (s[0] - g[0]).hypot(s[1] - g[1]) <= th;
        match &self.kind {
            Kind::Gold { task, .. } => states.iter().any(|s| near(s, task.gold, task.threshold)),
            Kind::Placement { task, .. } => states.last().is_some_and(|s| task.at_global(s)),
            Kind::MultiGoal { task, .. } => task
                .goals
                .iter()
                .all(|g| states.iter().any(|s| near(s, *g, task.threshold))),
        }
    }

    /// Closed-loop stop test: all goals of a multi-goal task visited.
    pub fn done(&self, states: &[State]) -> bool {
        matches!(self.kind, Kind::MultiGoal { .. }) && self.success(states)
    }

    /// Observation/control split, probed once at preparation time.
    pub fn mask(&self) -> &StateMask {
        &self.mask
    }
}
