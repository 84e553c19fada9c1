use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{GroundedTree, TreeError};
use crate::tournament::{ordered_choice, Choice, PreferenceLabel};

/// Structural and decision-level agreement between a human and an agent tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConformanceMetrics {
    pub structural_match: bool,
    pub root_agreement: bool,
    pub pairwise_agreement: f64,
    /// Jaccard overlap of the node sets at depth 1, 2, ….
    pub per_depth_overlap: Vec<f64>,
    /// Human labels the agent decided the other way, latest round first.
    pub flipped_pairs: Vec<PreferenceLabel>,
}

/// Compares two grounded trees over the same entrants. Every human label is
/// re-decided with `decide(left, right)`; disagreements are collected as
/// flipped pairs.
pub fn compare_trees(
    human: &GroundedTree,
    agent: &GroundedTree,
    labels: &[PreferenceLabel],
    decide: &mut dyn FnMut(&str, &str) -> Choice,
) -> Result<ConformanceMetrics, TreeError> {
    if human.tree().node_set() != agent.tree().node_set() {
        return Err(TreeError::MismatchedEntrants);
    }
    let root_agreement = human.root() == agent.root();
    let structural_match = root_agreement && human.tree().edges() == agent.tree().edges();

    let mut flipped: Vec<(usize, &PreferenceLabel)> =
        labels.iter().enumerate().filter(|(_, l)| decide(&l.left_id, &l.right_id) != l.choice).collect();
    flipped.sort_by(|(ia, a), (ib, b)| b.round.cmp(&a.round).then(ia.cmp(ib)));
    let pairwise_agreement =
        if labels.is_empty() { 1.0 } else { (labels.len() - flipped.len()) as f64 / labels.len() as f64 };

    let per_depth_overlap =
        (1..=human.max_depth().max(agent.max_depth())).map(|d| jaccard(&human.level(d), &agent.level(d))).collect();

    Ok(ConformanceMetrics {
        structural_match,
        root_agreement,
        pairwise_agreement,
        per_depth_overlap,
        flipped_pairs: flipped.into_iter().map(|(_, l)| l.clone()).collect(),
    })
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Reads pairwise preferences off a tree alone: an ancestor beats its
/// descendants; unrelated nodes are ordered by shallower depth, then higher
/// reward, then id.
#[derive(Debug, Clone, Copy)]
pub struct TreeDecider<'a> {
    tree: &'a GroundedTree,
}

impl<'a> TreeDecider<'a> {
    pub fn new(tree: &'a GroundedTree) -> Self {
        TreeDecider { tree }
    }

    pub fn decide(&self, left: &str, right: &str) -> Choice {
        let t = self.tree.tree();
        if t.is_ancestor(left, right) {
            return Choice::Left;
        }
        if t.is_ancestor(right, left) {
            return Choice::Right;
        }
        let depth = |id| self.tree.depth(id).unwrap_or(u32::MAX);
        match depth(left).cmp(&depth(right)) {
            std::cmp::Ordering::Less => Choice::Left,
            std::cmp::Ordering::Greater => Choice::Right,
            std::cmp::Ordering::Equal => ordered_choice(
                self.tree.reward(left).unwrap_or(f64::NEG_INFINITY),
                self.tree.reward(right).unwrap_or(f64::NEG_INFINITY),
                left,
                right,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preftree::{ground, Edge, GroundingParams, PreferenceTree};
    use crate::tournament::LabelSource;

    fn grounded(root: &str, edges: &[(&str, &str, u32)]) -> GroundedTree {
        let edges: Vec<Edge> =
            edges.iter().map(|&(p, c, w)| Edge { parent: p.into(), child: c.into(), weight: w }).collect();
        ground(&PreferenceTree::from_edges(root, &edges).unwrap(), GroundingParams::default()).unwrap()
    }

    fn label(l: &str, r: &str, choice: Choice, round: usize) -> PreferenceLabel {
        PreferenceLabel { left_id: l.into(), right_id: r.into(), choice, round, source: LabelSource::Simulated }
    }

    /// s1 beats s2, s3 beats s4, s1 beats s3.
    fn human() -> (GroundedTree, Vec<PreferenceLabel>) {
        (
            grounded("s1", &[("s1", "s2", 0), ("s1", "s3", 1), ("s3", "s4", 0)]),
            vec![
                label("s1", "s2", Choice::Left, 1),
                label("s3", "s4", Choice::Left, 1),
                label("s1", "s3", Choice::Left, 2),
            ],
        )
    }

    #[test]
    fn reflexive() {
        let (h, labels) = human();
        let mut decide = |l: &str, r: &str| TreeDecider::new(&h).decide(l, r);
        let m = compare_trees(&h, &h, &labels, &mut decide).unwrap();
        assert!(m.structural_match);
        assert!(m.root_agreement);
        assert_eq!(m.pairwise_agreement, 1.0);
        assert!(m.per_depth_overlap.iter().all(|&o| o == 1.0));
        assert!(m.flipped_pairs.is_empty());
    }

    #[test]
    fn one_flipped_first_round_decision() {
        let (h, labels) = human();
        // agent prefers s4 over s3, everything else the same
        let a = grounded("s1", &[("s1", "s2", 0), ("s1", "s4", 1), ("s4", "s3", 0)]);
        let mut decide = |l: &str, r: &str| match (l, r) {
            ("s3", "s4") => Choice::Right,
            _ => Choice::Left,
        };
        let m = compare_trees(&h, &a, &labels, &mut decide).unwrap();
        assert!((m.pairwise_agreement - 2.0 / 3.0).abs() < 1e-15);
        assert!(m.root_agreement);
        assert!(!m.structural_match);
        assert_eq!(m.flipped_pairs, vec![labels[1].clone()]);
        assert_eq!(m.per_depth_overlap, vec![1.0, 1.0 / 3.0, 0.0]);
    }

    #[test]
    fn different_roots() {
        let (h, labels) = human();
        let a = grounded("s2", &[("s2", "s1", 0), ("s2", "s3", 1), ("s3", "s4", 0)]);
        let mut decide = |l: &str, r: &str| TreeDecider::new(&a).decide(l, r);
        let m = compare_trees(&h, &a, &labels, &mut decide).unwrap();
        assert!(!m.root_agreement);
        assert!(!m.structural_match);
        assert_eq!(m.flipped_pairs.first().map(|l| l.round), Some(1));
        assert_eq!(m.flipped_pairs.len(), 1);
    }

    #[test]
    fn root_pair_listed_first() {
        let (h, labels) = human();
        let a = grounded("s3", &[("s3", "s1", 1), ("s1", "s2", 0), ("s3", "s4", 0)]);
        let mut decide = |l: &str, r: &str| TreeDecider::new(&a).decide(l, r);
        let m = compare_trees(&h, &a, &labels, &mut decide).unwrap();
        assert_eq!(m.flipped_pairs[0].round, 2);
        assert_eq!(m.flipped_pairs[0].left_id, "s1");
    }

    #[test]
    fn mismatched_entrants() {
        let (h, labels) = human();
        let a = grounded("s1", &[("s1", "s2", 0), ("s1", "s3", 1), ("s3", "s5", 0)]);
        let mut decide = |_: &str, _: &str| Choice::Left;
        assert_eq!(compare_trees(&h, &a, &labels, &mut decide), Err(TreeError::MismatchedEntrants));
    }

    #[test]
    fn tree_decider_orders_unrelated_nodes() {
        let (h, _) = human();
        let d = TreeDecider::new(&h);
        assert_eq!(d.decide("s4", "s1"), Choice::Right);
        // s2 (depth 2) vs s4 (depth 3)
        assert_eq!(d.decide("s4", "s2"), Choice::Right);
        // equal depth and reward fall back to id order
        assert_eq!(d.decide("s3", "s2"), Choice::Right);
    }
}
