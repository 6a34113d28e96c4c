//! Goal and diversity metrics.

use serde::{Deserialize, Serialize};

use crate::env::State;
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Number of priority-ordered goal pairs `(p[i], p[j])`, `i < j`, that were
/// also visited in that relative order. Goals never visited form no pairs.
/// The maximum is `C(|priority|, 2)`.
pub fn sequence_match(visit_order: &[usize], priority: &[usize]) -> Result<usize> {
    let mut rank = vec![None; priority.iter().copied().max().map_or(0, |m| m + 1)];
    for (i, &g) in priority.iter().enumerate() {
        if rank[g].replace(i).is_some() {
            return Err(Error::invalid(format!("goal {g} repeated in priority")));
        }
    }
    let mut seen = vec![false; rank.len()];
    let mut ranks = Vec::with_capacity(visit_order.len());
    for &g in visit_order {
        let r = rank
            .get(g)
            .copied()
            .flatten()
            .ok_or_else(|| Error::invalid(format!("visited goal {g} is not a task goal")))?;
        if std::mem::replace(&mut seen[g], true) {
            return Err(Error::invalid(format!("goal {g} visited twice")));
        }
        ranks.push(r);
    }
    let mut count = 0;
    for a in 0..ranks.len() {
        for b in a + 1..ranks.len() {
            if ranks[a] < ranks[b] {
                count += 1;
            }
        }
    }
    Ok(count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalMetrics {
    /// First step index (into the visited states) within the threshold of
    /// each goal.
    pub first_visits: Vec<Option<usize>>,
    pub found: usize,
    /// Steps taken divided by goals found; `None` when nothing was found.
    pub timesteps_per_goal: Option<f64>,
    /// Goal indices in first-visit order (ties broken by goal index).
    pub visit_order: Vec<usize>,
}

/// A goal counts as found when some visited state is within `threshold` of
/// it. `steps` is the number of environment steps the rollout took.
pub fn goal_metrics(states: &[State], steps: usize, goals: &[[f64; 2]], threshold: f64) -> GoalMetrics {
    let first_visits: Vec<Option<usize>> = goals
        .iter()
        .map(|g| {
            states
                .iter()
                .position(|s| (s[0] - g[0]).hypot(s[1] - g[1]) <= threshold)
        })
        .collect();
    let found = first_visits.iter().filter(|v| v.is_some()).count();
    let mut visit_order: Vec<usize> = (0..goals.len()).filter(|&g| first_visits[g].is_some()).collect();
    visit_order.sort_by_key(|&g| (first_visits[g], g));
    GoalMetrics {
        timesteps_per_goal: (found > 0).then(|| steps as f64 / found as f64),
        first_visits,
        found,
        visit_order,
    }
}

/// Mean L2 distance between flattened trajectories over all unordered pairs.
pub fn pairwise_distance(batch: &[Trajectory]) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::invalid("pairwise distance needs at least two trajectories"));
    }
    let shape = batch[0].shape();
    if let Some(bad) = batch.iter().find(|t| t.shape() != shape) {
        return Err(Error::Shape {
            expected: format!("{shape:?}"),
            actual: format!("{:?}", bad.shape()),
        });
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..batch.len() {
        for j in i + 1..batch.len() {
            sum += batch[i].distance(&batch[j]);
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_match_examples() {
        // Visit g2, g1, g4, g3 against priority g1..g4.
        assert_eq!(sequence_match(&[1, 0, 3, 2], &[0, 1, 2, 3]).unwrap(), 4);
        // Visit 2, 3, 4, 1.
        assert_eq!(sequence_match(&[1, 2, 3, 0], &[0, 1, 2, 3]).unwrap(), 3);
        assert_eq!(sequence_match(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap(), 6);
        assert_eq!(sequence_match(&[], &[0, 1, 2, 3]).unwrap(), 0);
        assert_eq!(sequence_match(&[2, 0], &[0, 1, 2, 3]).unwrap(), 0);
    }

    #[test]
    fn sequence_match_rejects_unknown_goals() {
        assert!(sequence_match(&[4], &[0, 1, 2, 3]).is_err());
        assert!(sequence_match(&[0, 0], &[0, 1, 2, 3]).is_err());
        assert!(sequence_match(&[0], &[0, 0]).is_err());
    }

    #[test]
    fn goal_metrics_examples() {
        let at = |x: f64, y: f64| [x, y, 0.0, 0.0];
        let goals = [[1.0, 1.0], [5.0, 5.0]];
        let states = vec![at(0.0, 0.0), at(1.0, 1.0)];
        let m = goal_metrics(&states, 1, &goals, 0.1);
        assert!(m.found >= 1);
        assert_eq!(m.first_visits, vec![Some(1), None]);

        let m = goal_metrics(&[at(9.0, 9.0)], 0, &goals, 0.1);
        assert_eq!(m.found, 0);
        assert_eq!(m.timesteps_per_goal, None);

        let mut states = vec![at(0.0, 0.0); 401];
        states[100] = at(5.0, 5.05);
        states[300] = at(1.0, 1.0);
        let m = goal_metrics(&states, 400, &goals, 0.1);
        assert_eq!(m.timesteps_per_goal, Some(200.0));
        assert_eq!(m.visit_order, vec![1, 0]);
    }

    #[test]
    fn pairwise_distance_examples() {
        let a = Trajectory::zeros(5, 2);
        assert_eq!(pairwise_distance(&[a.clone(), a.clone()]).unwrap(), 0.0);
        let mut b = a.clone();
        for t in 0..5 {
            b.set(t, 1, 0.5);
        }
        let d = pairwise_distance(&[a.clone(), b]).unwrap();
        assert!((d - 5f64.sqrt() * 0.5).abs() < 1e-15);
        // Points on a line at 0, 1, 3: distances 1, 3, 2.
        let p = |x: f64| Trajectory::new(1, 1, vec![x]).unwrap();
        assert_eq!(pairwise_distance(&[p(0.0), p(1.0), p(3.0)]).unwrap(), 2.0);
        assert!(pairwise_distance(&[a]).is_err());
    }
}
