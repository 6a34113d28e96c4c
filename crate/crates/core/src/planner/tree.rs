use serde::{Deserialize, Serialize};

use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentLeaf {
    pub trajectory: Trajectory,
    pub guide_score: f64,
    pub true_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildLeaf {
    pub parent: usize,
    pub branch_site: usize,
    pub trajectory: Trajectory,
    pub guide_score: f64,
    pub true_score: f64,
}

/// Parents and children of one plan. Leaves are indexed parents first, then
/// children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTree {
    pub root: Vec<f64>,
    pub parents: Vec<ParentLeaf>,
    pub children: Vec<ChildLeaf>,
    pub selected: usize,
}

/// One line of a tree dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafRecord {
    pub leaf: usize,
    pub parent: Option<usize>,
    pub branch_site: Option<usize>,
    pub guide_score: f64,
    pub true_score: f64,
    pub selected: bool,
}

/// Index of the largest score; ties go to the lowest index. NaN never wins.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, s) in scores.iter().enumerate() {
        match best {
            _ if s.is_nan() => {}
            None => best = Some(k),
            Some(b) if *s > scores[b] => best = Some(k),
            _ => {}
        }
    }
    best
}

impl TrajectoryTree {
    pub fn leaf_count(&self) -> usize {
        self.parents.len() + self.children.len()
    }

    pub fn leaf(&self, k: usize) -> &Trajectory {
        if k < self.parents.len() {
            &self.parents[k].trajectory
        } else {
            &self.children[k - self.parents.len()].trajectory
        }
    }

    pub fn true_scores(&self) -> Vec<f64> {
        self.parents
            .iter()
            .map(|p| p.true_score)
            .chain(self.children.iter().map(|c| c.true_score))
            .collect()
    }

    pub fn selected_trajectory(&self) -> &Trajectory {
        self.leaf(self.selected)
    }

    pub fn records(&self) -> Vec<LeafRecord> {
        let np = self.parents.len();
        let parents = self.parents.iter().enumerate().map(|(k, p)| LeafRecord {
            leaf: k,
            parent: None,
            branch_site: None,
            guide_score: p.guide_score,
            true_score: p.true_score,
            selected: k == self.selected,
        });
        let children = self.children.iter().enumerate().map(|(j, c)| LeafRecord {
            leaf: np + j,
            parent: Some(c.parent),
            branch_site: Some(c.branch_site),
            guide_score: c.guide_score,
            true_score: c.true_score,
            selected: np + j == self.selected,
        });
        parents.chain(children).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_rules() {
        assert_eq!(argmax_first(&[]), None);
        assert_eq!(argmax_first(&[1.0]), Some(0));
        assert_eq!(argmax_first(&[3.0, 5.0]), Some(1));
        assert_eq!(argmax_first(&[2.0, 2.0, 2.0]), Some(0));
        assert_eq!(argmax_first(&[f64::NAN, -1.0]), Some(1));
    }
}
