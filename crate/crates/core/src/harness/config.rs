//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tasks::TaskSpec;
use crate::error::{Error, Result};
use crate::planner::{PlannerConfig, Variant};
use crate::schedule::ScheduleKind;

/// Either an explicit list or `{ start, count }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedList {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl SeedList {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedList::List(v) => v.clone(),
            SeedList::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub task: TaskSpec,
    #[serde(default)]
    pub planner: PlannerConfig,
    pub variants: Vec<Variant>,
    /// Leaf budgets. Tree variants split each budget evenly between parents
    /// and children; the others spend it all on samples.
    pub budgets: Vec<usize>,
    pub seeds: SeedList,
    pub output: PathBuf,
    #[serde(default)]
    pub schedule: ScheduleKind,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::Config("variants must not be empty".into()));
        }
        if self.budgets.is_empty() || self.budgets.contains(&0) {
            return Err(Error::Config("budgets must be a nonempty list of positive counts".into()));
        }
        if self.seeds.seeds().is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        for &v in &self.variants {
            for &b in &self.budgets {
                let (samples, children) = leaf_split(v, b)?;
                PlannerConfig {
                    variant: v,
                    samples,
                    children,
                    ..self.planner.clone()
                }
                .validate(self.task.model().diffusion_steps)?;
            }
        }
        Ok(())
    }
}

/// `(samples, children)` for a leaf budget. Diffuser-GG always draws a single
/// sample regardless of budget.
pub fn leaf_split(variant: Variant, budget: usize) -> Result<(usize, usize)> {
    match variant {
        Variant::Tdp | Variant::TdpNoPg => {
            if budget < 2 {
                return Err(Error::Config(format!("{variant} needs a leaf budget of at least 2")));
            }
            let parents = budget.div_ceil(2);
            Ok((parents, budget - parents))
        }
        Variant::DiffuserGg => Ok((1, 0)),
        _ => Ok((budget, 0)),
    }
}
