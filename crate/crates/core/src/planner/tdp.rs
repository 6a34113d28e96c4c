//! Parent branching, sub-tree expansion and leaf selection.

use rand::Rng as _;

use super::config::{BranchSitePolicy, PgMode, PlannerConfig, Variant};
use super::tree::{argmax_first, ChildLeaf, ParentLeaf, TrajectoryTree};
use crate::baselines;
use crate::diffusion::{Denoiser, NoGuidance};
use crate::error::{Error, Result};
use crate::guidance::{decompose_states, GradientGuidance, GuideFunction, IntegratedGuidance, StateMask};
use crate::rng::{tags, SeedStream};
use crate::trajectory::{ConditionSet, Trajectory};

/// Number of unguided samples used to probe the guide for state
/// decomposition; the all-zeros trajectory is added on top.
pub const PROBE_SAMPLES: usize = 8;

/// Everything a single plan call needs besides its config and seed.
pub struct Problem<'a> {
    pub denoiser: &'a Denoiser,
    pub guide: &'a dyn GuideFunction,
    pub true_guide: &'a dyn GuideFunction,
    pub conditions: ConditionSet,
    pub mask: StateMask,
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub selected: Trajectory,
    pub tree: TrajectoryTree,
    /// Per-sample reverse steps spent by this call.
    pub reverse_steps: u64,
    /// Candidate draws of the stochastic-sampling baseline (zero otherwise).
    pub candidate_draws: u64,
}

/// Observation/control split from unguided probe samples plus zeros. Probe
/// sampling runs on its own seed stream and is not part of any plan budget.
pub fn probe_mask(
    denoiser: &Denoiser,
    guide: &dyn GuideFunction,
    conditions: &ConditionSet,
    eps: f64,
    seeds: &SeedStream,
) -> Result<StateMask> {
    let mut probes = denoiser.sample(conditions, &NoGuidance, PROBE_SAMPLES, &seeds.derive(tags::PROBES))?;
    let shape = denoiser.shape();
    probes.push(Trajectory::zeros(shape.horizon, shape.channels));
    decompose_states(guide, &probes, eps)
}

/// Parent batch: the full reverse chain with particle guidance on control
/// channels and, in conditional mode, gradient guidance on observation
/// channels.
pub fn parent_branching(problem: &Problem, cfg: &PlannerConfig, seeds: &SeedStream) -> Result<Vec<Trajectory>> {
    let alpha_g = match cfg.pg_mode {
        PgMode::Conditional => cfg.alpha_g,
        PgMode::Unconditional => 0.0,
    };
    let guidance = IntegratedGuidance {
        guide: problem.guide,
        mask: problem.mask.clone(),
        alpha_p: cfg.effective_alpha_p(),
        alpha_g,
        bandwidth: cfg.bandwidth,
    };
    let mut rngs = seeds.derive(tags::PARENTS).batch(cfg.samples);
    problem
        .denoiser
        .sample_with(std::slice::from_ref(&problem.conditions), &guidance, &mut rngs)
}

/// Children of `parents`: child `j` re-noises parent `j mod N` to the fast
/// level, keeps its rows `0..=b` fixed and denoises the rest with gradient
/// guidance. Returns `(parent, branch site, child)`.
pub fn subtree_expansion(
    problem: &Problem,
    parents: &[Trajectory],
    cfg: &PlannerConfig,
    seeds: &SeedStream,
) -> Result<Vec<(usize, usize, Trajectory)>> {
    if parents.is_empty() {
        return Err(Error::invalid("sub-tree expansion needs at least one parent"));
    }
    let horizon = problem.denoiser.shape().horizon;
    let stream = seeds.derive(tags::CHILDREN);
    let mut rngs = stream.batch(cfg.children);
    let mut starts = Vec::with_capacity(cfg.children);
    let mut conds = Vec::with_capacity(cfg.children);
    let mut meta = Vec::with_capacity(cfg.children);
    for (j, rng) in rngs.iter_mut().enumerate() {
        let p = j % parents.len();
        let b = match cfg.branch_sites {
            BranchSitePolicy::Uniform => rng.random_range(0..horizon),
            BranchSitePolicy::Fixed(b) => b.min(horizon - 1),
        };
        let parent = &parents[p];
        let mut prefix = ConditionSet::new();
        for t in 0..=b {
            prefix.insert_row(t, parent.row(t))?;
        }
        conds.push(prefix.merged_with(&problem.conditions));
        starts.push(parent.clone());
        meta.push((p, b));
    }
    let guidance = GradientGuidance {
        guide: problem.guide,
        alpha_g: cfg.alpha_g,
        mask: cfg.split_child_guidance.then(|| problem.mask.clone()),
    };
    let children = problem
        .denoiser
        .partial_denoise(&starts, cfg.fast_steps, &conds, &guidance, &mut rngs)
        .map_err(|e| match e {
            Error::Batch { index, source } => Error::invalid(format!(
                "child {index} of parent {} failed: {source}",
                meta[index].0
            )),
            other => other,
        })?;
    Ok(meta
        .into_iter()
        .zip(children)
        .map(|((p, b), c)| (p, b, c))
        .collect())
}

/// Scores every leaf with `true_guide`, stores the scores and returns the
/// selected leaf index.
pub fn leaf_evaluation(tree: &mut TrajectoryTree, true_guide: &dyn GuideFunction) -> Result<usize> {
    for p in tree.parents.iter_mut() {
        p.true_score = true_guide.value(&p.trajectory);
    }
    for c in tree.children.iter_mut() {
        c.true_score = true_guide.value(&c.trajectory);
    }
    let best = argmax_first(&tree.true_scores()).ok_or_else(|| Error::invalid("tree has no leaves"))?;
    tree.selected = best;
    Ok(best)
}

fn build_tree(problem: &Problem, parents: Vec<Trajectory>, children: Vec<(usize, usize, Trajectory)>) -> TrajectoryTree {
    let root = parents
        .first()
        .map(|p| p.row(0).to_vec())
        .unwrap_or_default();
    TrajectoryTree {
        root,
        parents: parents
            .into_iter()
            .map(|t| ParentLeaf {
                guide_score: problem.guide.value(&t),
                true_score: f64::NAN,
                trajectory: t,
            })
            .collect(),
        children: children
            .into_iter()
            .map(|(parent, branch_site, t)| ChildLeaf {
                parent,
                branch_site,
                guide_score: problem.guide.value(&t),
                true_score: f64::NAN,
                trajectory: t,
            })
            .collect(),
        selected: 0,
    }
}

pub fn plan(problem: &Problem, cfg: &PlannerConfig, seeds: &SeedStream) -> Result<PlanOutput> {
    cfg.validate(problem.denoiser.schedule().steps())?;
    problem.conditions.validate(problem.denoiser.shape())?;
    let before = problem.denoiser.reverse_steps();
    let mut candidate_draws = 0;
    let (parents, children) = match cfg.variant {
        Variant::Tdp | Variant::TdpNoPg => {
            let parents = parent_branching(problem, cfg, seeds)?;
            let children = subtree_expansion(problem, &parents, cfg, seeds)?;
            (parents, children)
        }
        Variant::TdpNoChild => (parent_branching(problem, cfg, seeds)?, Vec::new()),
        Variant::DiffuserGg => (
            vec![baselines::diffuser_gg(problem.denoiser, problem.guide, &problem.conditions, cfg.alpha_g, seeds)?],
            Vec::new(),
        ),
        Variant::Mcss => (
            baselines::mcss_candidates(problem.denoiser, problem.guide, &problem.conditions, cfg.alpha_g, cfg.samples, seeds)?,
            Vec::new(),
        ),
        Variant::McssSs => {
            let out = baselines::mcss_ss_candidates(
                problem.denoiser,
                problem.guide,
                &problem.conditions,
                cfg.alpha_g,
                cfg.samples,
                cfg.ss_candidates,
                cfg.ss_temperature,
                seeds,
            )?;
            candidate_draws = out.candidate_draws;
            (out.samples, Vec::new())
        }
    };
    let mut tree = build_tree(problem, parents, children);
    let selected = leaf_evaluation(&mut tree, problem.true_guide)?;
    Ok(PlanOutput {
        selected: tree.leaf(selected).clone(),
        tree,
        reverse_steps: problem.denoiser.reverse_steps() - before,
        candidate_draws,
    })
}
