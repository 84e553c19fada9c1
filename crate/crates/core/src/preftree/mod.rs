//! Preference trees: condensed tournament dendrograms with weighted edges,
//! grounded into per-node rewards.

mod compare;
mod reward;
mod serialize;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tournament::Dendrogram;

pub use compare::{compare_trees, ConformanceMetrics, TreeDecider};
pub use reward::{cosine_similarity, PreferenceReward, SimilarityRule};
pub use serialize::{GroundedTreeDoc, TreeFormat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("malformed tree: {0}")]
    Malformed(String),
    #[error("grounding constants must be positive (r_b={r_b}, r_e={r_e})")]
    InvalidParams { r_b: f64, r_e: f64 },
    #[error("preference tree has no nodes")]
    EmptyTree,
    #[error("no feature vector for tree node {0:?}")]
    MissingFeatures(String),
    #[error("feature vector has zero norm or non-finite entries")]
    DegenerateFeatures,
    #[error("trees cover different entrant sets")]
    MismatchedEntrants,
    #[error("unknown tree format {0:?}")]
    UnknownFormat(String),
    #[error("cannot parse tree document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub parent: String,
    pub child: String,
    pub weight: u32,
}

/// Rooted tree over distinct state ids. Children are kept sorted by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceTree {
    root: String,
    children: BTreeMap<String, BTreeMap<String, u32>>,
    parent: BTreeMap<String, (String, u32)>,
}

impl PreferenceTree {
    /// Builds a tree from an edge list, checking that it is a single rooted
    /// tree spanning exactly `root` and the edge endpoints.
    pub fn from_edges(root: &str, edges: &[Edge]) -> Result<PreferenceTree, TreeError> {
        let mut children: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        let mut parent = BTreeMap::new();
        children.insert(root.to_string(), BTreeMap::new());
        for e in edges {
            if e.child == root {
                return Err(TreeError::Malformed(format!("root {root:?} has a parent")));
            }
            if e.child == e.parent {
                return Err(TreeError::Malformed(format!("self loop on {:?}", e.child)));
            }
            if parent.insert(e.child.clone(), (e.parent.clone(), e.weight)).is_some() {
                return Err(TreeError::Malformed(format!("{:?} has two parents", e.child)));
            }
            children.entry(e.child.clone()).or_default();
            children.entry(e.parent.clone()).or_default().insert(e.child.clone(), e.weight);
        }
        let tree = PreferenceTree { root: root.to_string(), children, parent };
        let reached = tree.preorder().len();
        if reached != tree.children.len() {
            return Err(TreeError::Malformed("tree is disconnected or cyclic".into()));
        }
        Ok(tree)
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.children.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.children.keys().map(String::as_str)
    }

    pub fn node_set(&self) -> BTreeSet<&str> {
        self.nodes().collect()
    }

    /// `(child id, weight)` pairs sorted by child id.
    pub fn children_of(&self, id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.children.get(id).into_iter().flat_map(|c| c.iter().map(|(k, &w)| (k.as_str(), w)))
    }

    pub fn parent_of(&self, id: &str) -> Option<(&str, u32)> {
        self.parent.get(id).map(|(p, w)| (p.as_str(), *w))
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        self.children.get(id).is_some_and(BTreeMap::is_empty)
    }

    /// Edges sorted by (parent, child).
    pub fn edges(&self) -> Vec<Edge> {
        self.children
            .iter()
            .flat_map(|(p, cs)| cs.iter().map(move |(c, &w)| Edge { parent: p.clone(), child: c.clone(), weight: w }))
            .collect()
    }

    pub fn total_weight(&self) -> u64 {
        self.parent.values().map(|&(_, w)| u64::from(w)).sum()
    }

    /// True when `ancestor` lies strictly above `id`.
    pub fn is_ancestor(&self, ancestor: &str, id: &str) -> bool {
        let mut cur = id;
        while let Some((p, _)) = self.parent_of(cur) {
            if p == ancestor {
                return true;
            }
            cur = p;
        }
        false
    }

    fn preorder(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.children.len());
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.root.as_str()];
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            out.push(n);
            stack.extend(self.children_of(n).map(|(c, _)| c));
        }
        out
    }

    /// Depth of each node with the root at 1.
    pub fn depths(&self) -> BTreeMap<String, u32> {
        let mut depth = BTreeMap::new();
        let mut queue = VecDeque::from([(self.root.as_str(), 1u32)]);
        while let Some((n, d)) = queue.pop_front() {
            depth.insert(n.to_string(), d);
            queue.extend(self.children_of(n).map(|(c, _)| (c, d + 1)));
        }
        depth
    }
}

/// Condenses a dendrogram into a preference tree.
///
/// Depth-first from the dendrogram root: a child carrying the same id as its
/// parent is walked through without emitting anything; any other child
/// becomes a tree node under the current id. The edge weight is the number
/// of matches the child won before it lost.
pub fn condense(d: &Dendrogram) -> Result<PreferenceTree, TreeError> {
    let mut edges = Vec::with_capacity(d.len() / 2);
    descend(d, d.root(), &mut edges);
    PreferenceTree::from_edges(d.champion(), &edges)
}

fn descend(d: &Dendrogram, head: usize, edges: &mut Vec<Edge>) {
    let head_id = &d.node(head).id;
    for &child in d.children(head) {
        let child_id = &d.node(child).id;
        if child_id != head_id {
            edges.push(Edge { parent: head_id.clone(), child: child_id.clone(), weight: wins_below(d, child) });
        }
        descend(d, child, edges);
    }
}

/// Length of the same-id chain of internal nodes starting at `node`.
fn wins_below(d: &Dendrogram, mut node: usize) -> u32 {
    let id = &d.node(node).id;
    let mut wins = 0;
    while let Some(&next) = d.children(node).iter().find(|&&c| &d.node(c).id == id) {
        wins += 1;
        node = next;
    }
    wins
}

/// Leaf penalty `r_b` and per-win edge reward `r_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingParams {
    pub r_b: f64,
    pub r_e: f64,
}

impl Default for GroundingParams {
    fn default() -> Self {
        GroundingParams { r_b: 1.0, r_e: 0.5 }
    }
}

impl GroundingParams {
    pub fn new(r_b: f64, r_e: f64) -> Result<Self, TreeError> {
        let p = GroundingParams { r_b, r_e };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.r_b) && ok(self.r_e) {
            Ok(())
        } else {
            Err(TreeError::InvalidParams { r_b: self.r_b, r_e: self.r_e })
        }
    }
}

/// A preference tree with node rewards and depths attached.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedTree {
    tree: PreferenceTree,
    params: GroundingParams,
    reward: BTreeMap<String, f64>,
    depth: BTreeMap<String, u32>,
}

impl GroundedTree {
    pub fn tree(&self) -> &PreferenceTree {
        &self.tree
    }

    pub fn params(&self) -> GroundingParams {
        self.params
    }

    pub fn root(&self) -> &str {
        self.tree.root()
    }

    pub fn reward(&self, id: &str) -> Option<f64> {
        self.reward.get(id).copied()
    }

    pub fn depth(&self, id: &str) -> Option<u32> {
        self.depth.get(id).copied()
    }

    pub fn rewards(&self) -> &BTreeMap<String, f64> {
        &self.reward
    }

    pub fn depths(&self) -> &BTreeMap<String, u32> {
        &self.depth
    }

    pub fn max_depth(&self) -> u32 {
        self.depth.values().copied().max().unwrap_or(0)
    }

    /// Node ids at a given depth, sorted.
    pub fn level(&self, depth: u32) -> BTreeSet<&str> {
        self.depth.iter().filter(|&(_, &d)| d == depth).map(|(id, _)| id.as_str()).collect()
    }
}

/// Assigns rewards bottom-up: leaves get `-r_b`; an inner node gets the mean
/// over its children of `child reward + r_e · edge weight`.
pub fn ground(tree: &PreferenceTree, params: GroundingParams) -> Result<GroundedTree, TreeError> {
    params.validate()?;
    let depth = tree.depths();
    let mut order: Vec<&str> = tree.nodes().collect();
    order.sort_by_key(|id| std::cmp::Reverse(depth[*id]));
    let mut reward = BTreeMap::new();
    for id in order {
        let value = if tree.is_leaf(id) {
            -params.r_b
        } else {
            let (sum, count) = tree
                .children_of(id)
                .fold((0.0, 0usize), |(s, n), (c, w)| (s + reward[c] + params.r_e * f64::from(w), n + 1));
            sum / count as f64
        };
        reward.insert(id.to_string(), value);
    }
    Ok(GroundedTree { tree: tree.clone(), params, reward, depth })
}
