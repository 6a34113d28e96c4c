use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{Bandwidth, DEFAULT_DECOMPOSITION_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Tdp,
    TdpNoChild,
    TdpNoPg,
    DiffuserGg,
    Mcss,
    McssSs,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Tdp,
        Variant::TdpNoChild,
        Variant::TdpNoPg,
        Variant::DiffuserGg,
        Variant::Mcss,
        Variant::McssSs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Tdp => "tdp",
            Variant::TdpNoChild => "tdp-no-child",
            Variant::TdpNoPg => "tdp-no-pg",
            Variant::DiffuserGg => "diffuser-gg",
            Variant::Mcss => "mcss",
            Variant::McssSs => "mcss-ss",
        }
    }

    /// Whether the variant expands children from its parents.
    pub fn has_children(self) -> bool {
        matches!(self, Variant::Tdp | Variant::TdpNoPg)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown planner variant `{s}`")))
    }
}

/// Guidance applied while sampling parents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgMode {
    /// Particle guidance only; parents ignore the guide.
    #[default]
    Unconditional,
    /// Particle guidance on control channels plus gradient guidance on
    /// observation channels.
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    #[default]
    Open,
    Closed,
}

/// Where children branch off their parent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "site")]
pub enum BranchSitePolicy {
    /// Uniform over `0..horizon`.
    #[default]
    Uniform,
    /// Always the given row (clamped to the horizon).
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub variant: Variant,
    /// Parent count `N` (candidate count for the sampling baselines).
    pub samples: usize,
    /// Child count `B`.
    pub children: usize,
    /// Fast denoising steps for children.
    pub fast_steps: usize,
    pub alpha_p: f64,
    pub alpha_g: f64,
    pub pg_mode: PgMode,
    pub loop_mode: LoopMode,
    pub t_max: usize,
    /// Closed loop: planned rows executed before replanning.
    pub replan_every: usize,
    pub seed: u64,
    pub bandwidth: Bandwidth,
    pub branch_sites: BranchSitePolicy,
    /// Restrict child gradient guidance to observation channels.
    pub split_child_guidance: bool,
    /// Candidates per step for the stochastic-sampling baseline.
    pub ss_candidates: usize,
    pub ss_temperature: f64,
    pub decomposition_eps: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Tdp,
            samples: 32,
            children: 32,
            fast_steps: 10,
            alpha_p: 0.1,
            alpha_g: 1.0,
            pg_mode: PgMode::Unconditional,
            loop_mode: LoopMode::Open,
            t_max: 64,
            replan_every: 1,
            seed: 0,
            bandwidth: Bandwidth::Median,
            branch_sites: BranchSitePolicy::Uniform,
            split_child_guidance: false,
            ss_candidates: 4,
            ss_temperature: 1.0,
            decomposition_eps: DEFAULT_DECOMPOSITION_EPS,
        }
    }
}

impl PlannerConfig {
    /// Checks the budgets against a schedule of `diffusion_steps` steps.
    pub fn validate(&self, diffusion_steps: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.samples == 0 {
            return bad("samples must be at least 1");
        }
        if self.variant.has_children() {
            if self.children == 0 {
                return bad("tree variants need at least one child");
            }
            if self.fast_steps == 0 || self.fast_steps > diffusion_steps {
                return bad("fast_steps must lie in 1..=diffusion steps");
            }
        }
        if !(self.alpha_p >= 0.0 && self.alpha_g >= 0.0) {
            return bad("guidance strengths must be nonnegative");
        }
        if self.t_max == 0 {
            return bad("t_max must be at least 1");
        }
        if self.replan_every == 0 {
            return bad("replan_every must be at least 1");
        }
        if self.variant == Variant::McssSs {
            if self.ss_candidates == 0 {
                return bad("ss_candidates must be at least 1");
            }
            if !(self.ss_temperature > 0.0) {
                return bad("ss_temperature must be positive");
            }
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return bad("bandwidth must be positive");
            }
        }
        if !(self.decomposition_eps > 0.0) {
            return bad("decomposition_eps must be positive");
        }
        Ok(())
    }

    /// Parent particle strength after applying the variant.
    pub fn effective_alpha_p(&self) -> f64 {
        match self.variant {
            Variant::TdpNoPg => 0.0,
            _ => self.alpha_p,
        }
    }
}
