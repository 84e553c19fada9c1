use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Edge, GroundedTree, GroundingParams, PreferenceTree, TreeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeFormat {
    Json,
    Dot,
}

impl FromStr for TreeFormat {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(TreeFormat::Json),
            "dot" => Ok(TreeFormat::Dot),
            other => Err(TreeError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    pub reward: f64,
    pub depth: u32,
}

/// Wire form of a grounded tree; nodes sorted by id, edges by (parent, child).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedTreeDoc {
    pub root: String,
    pub params: GroundingParams,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<Edge>,
}

impl From<&GroundedTree> for GroundedTreeDoc {
    fn from(g: &GroundedTree) -> Self {
        GroundedTreeDoc {
            root: g.root().to_string(),
            params: g.params(),
            nodes: g
                .rewards()
                .iter()
                .map(|(id, &reward)| NodeDoc { id: id.clone(), reward, depth: g.depths()[id] })
                .collect(),
            edges: g.tree().edges(),
        }
    }
}

impl TryFrom<GroundedTreeDoc> for GroundedTree {
    type Error = TreeError;

    fn try_from(doc: GroundedTreeDoc) -> Result<Self, Self::Error> {
        doc.params.validate()?;
        if doc.nodes.is_empty() {
            return Err(TreeError::EmptyTree);
        }
        let tree = PreferenceTree::from_edges(&doc.root, &doc.edges)?;
        let mut reward = BTreeMap::new();
        let mut depth = BTreeMap::new();
        for n in doc.nodes {
            if !n.reward.is_finite() {
                return Err(TreeError::Parse(format!("non-finite reward on {:?}", n.id)));
            }
            if reward.insert(n.id.clone(), n.reward).is_some() {
                return Err(TreeError::Parse(format!("node {:?} listed twice", n.id)));
            }
            depth.insert(n.id, n.depth);
        }
        if !reward.keys().map(String::as_str).eq(tree.nodes()) {
            return Err(TreeError::Parse("node list does not match the edges".into()));
        }
        if depth != tree.depths() {
            return Err(TreeError::Parse("depths are inconsistent with the edges".into()));
        }
        if let Some(id) = tree.nodes().find(|id| tree.is_leaf(id) && reward[*id] != -doc.params.r_b) {
            return Err(TreeError::Parse(format!("leaf {id:?} does not carry -r_b")));
        }
        Ok(GroundedTree { tree, params: doc.params, reward, depth })
    }
}

impl GroundedTree {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GroundedTreeDoc::from(self)).expect("tree documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<GroundedTree, TreeError> {
        let doc: GroundedTreeDoc = serde_json::from_str(text).map_err(|e| TreeError::Parse(e.to_string()))?;
        GroundedTree::try_from(doc)
    }

    /// Graphviz rendering: one node statement per state with its reward and
    /// depth, one edge statement per tree edge labelled with its weight.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph preference_tree {\n  rankdir=TB;\n");
        for (id, reward) in self.rewards() {
            let _ = writeln!(out, "  \"{id}\" [label=\"{id}\\nreward={reward}\\ndepth={}\"];", self.depths()[id]);
        }
        for e in self.tree().edges() {
            let _ = writeln!(out, "  \"{}\" -> \"{}\" [label=\"w={}\"];", e.parent, e.child, e.weight);
        }
        out.push_str("}\n");
        out
    }

    pub fn serialize(&self, format: TreeFormat) -> String {
        match format {
            TreeFormat::Json => self.to_json(),
            TreeFormat::Dot => self.to_dot(),
        }
    }
}

impl Serialize for GroundedTree {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        GroundedTreeDoc::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GroundedTree {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = GroundedTreeDoc::deserialize(deserializer)?;
        GroundedTree::try_from(doc).map_err(serde::de::Error::custom)
    }
}
