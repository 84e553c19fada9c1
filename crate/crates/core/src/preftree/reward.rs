use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GroundedTree, TreeError};

/// How a query state is matched against the grounded tree nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityRule {
    /// `min` over all nodes of `cos(s, node) · reward(node) · depth(node)`.
    MinProduct,
    /// `reward(node) · depth(node)` of the most cosine-similar node, ties
    /// going to the smaller id. Identical to `MinProduct` on a single node.
    #[default]
    NearestNode,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let na = norm(a)?;
    let nb = norm(b)?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some(dot / (na * nb))
}

fn norm(v: &[f64]) -> Option<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then_some(n)
}

#[derive(Debug, Clone, PartialEq)]
struct NodeTerm {
    id: String,
    unit: Vec<f64>,
    /// reward × depth
    weight: f64,
}

/// The preference reward of a grounded tree, evaluable on any feature
/// vector of the same dimension as the tree nodes' features.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceReward {
    terms: Vec<NodeTerm>,
    rule: SimilarityRule,
}

impl PreferenceReward {
    pub fn new(
        tree: &GroundedTree,
        features_by_id: &BTreeMap<String, Vec<f64>>,
        rule: SimilarityRule,
    ) -> Result<Self, TreeError> {
        let mut terms = Vec::with_capacity(tree.tree().len());
        let mut dim = None;
        for id in tree.tree().nodes() {
            let f = features_by_id.get(id).ok_or_else(|| TreeError::MissingFeatures(id.to_string()))?;
            if *dim.get_or_insert(f.len()) != f.len() {
                return Err(TreeError::DegenerateFeatures);
            }
            let unit = unit(f)?;
            let weight = tree.reward(id).unwrap_or_default() * f64::from(tree.depth(id).unwrap_or_default());
            terms.push(NodeTerm { id: id.to_string(), unit, weight });
        }
        if terms.is_empty() {
            return Err(TreeError::EmptyTree);
        }
        Ok(PreferenceReward { terms, rule })
    }

    pub fn rule(&self) -> SimilarityRule {
        self.rule
    }

    pub fn value(&self, features: &[f64]) -> Result<f64, TreeError> {
        let q = unit(features)?;
        if q.len() != self.terms[0].unit.len() {
            return Err(TreeError::DegenerateFeatures);
        }
        let cos = |t: &NodeTerm| t.unit.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
        Ok(match self.rule {
            SimilarityRule::MinProduct => self.terms.iter().map(|t| cos(t) * t.weight).fold(f64::INFINITY, f64::min),
            SimilarityRule::NearestNode => {
                // terms are in id order, so strict > keeps the smallest id on ties
                let mut best = &self.terms[0];
                let mut best_cos = cos(best);
                for t in &self.terms[1..] {
                    let c = cos(t);
                    if c > best_cos {
                        best = t;
                        best_cos = c;
                    }
                }
                best.weight
            }
        })
    }

    /// Node ids in evaluation order.
    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|t| t.id.as_str())
    }
}

fn unit(v: &[f64]) -> Result<Vec<f64>, TreeError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(TreeError::DegenerateFeatures);
    }
    let n = norm(v).ok_or(TreeError::DegenerateFeatures)?;
    Ok(v.iter().map(|x| x / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preftree::{ground, Edge, GroundingParams, PreferenceTree};

    fn three_node() -> GroundedTree {
        let edges = [
            Edge { parent: "A".into(), child: "B".into(), weight: 1 },
            Edge { parent: "A".into(), child: "C".into(), weight: 0 },
        ];
        ground(&PreferenceTree::from_edges("A", &edges).unwrap(), GroundingParams::default()).unwrap()
    }

    fn features() -> BTreeMap<String, Vec<f64>> {
        BTreeMap::from([
            ("A".to_string(), vec![1.0, 0.0, 1.0]),
            ("B".to_string(), vec![0.0, 1.0, 1.0]),
            ("C".to_string(), vec![1.0, 1.0, 1.0]),
        ])
    }

    #[test]
    fn single_node_self_query() {
        let t =
            ground(&PreferenceTree::from_edges("A", &[]).unwrap(), GroundingParams::new(2.0, 1.0).unwrap()).unwrap();
        for rule in [SimilarityRule::MinProduct, SimilarityRule::NearestNode] {
            let f = PreferenceReward::new(&t, &features(), rule).unwrap();
            assert!((f.value(&[1.0, 0.0, 1.0]).unwrap() + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn min_product_matches_exhaustive_min() {
        let g = three_node();
        let feats = features();
        let f = PreferenceReward::new(&g, &feats, SimilarityRule::MinProduct).unwrap();
        let query = [0.3, 0.9, 1.0];
        let brute = ["A", "B", "C"]
            .iter()
            .map(|id| {
                cosine_similarity(&query, &feats[*id]).unwrap()
                    * g.reward(id).unwrap()
                    * f64::from(g.depth(id).unwrap())
            })
            .fold(f64::INFINITY, f64::min);
        assert!((f.value(&query).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn nearest_node_picks_most_similar() {
        let g = three_node();
        let f = PreferenceReward::new(&g, &features(), SimilarityRule::NearestNode).unwrap();
        // closest to B: reward -1, depth 2
        assert_eq!(f.value(&[0.0, 2.0, 2.1]).unwrap(), -2.0);
        // exactly A: reward -0.75, depth 1
        assert_eq!(f.value(&[1.0, 0.0, 1.0]).unwrap(), -0.75);
    }

    #[test]
    fn scale_invariance() {
        let g = three_node();
        for rule in [SimilarityRule::MinProduct, SimilarityRule::NearestNode] {
            let f = PreferenceReward::new(&g, &features(), rule).unwrap();
            let q = [0.2, 0.7, 1.0];
            let scaled: Vec<f64> = q.iter().map(|x| x * 13.5).collect();
            assert!((f.value(&q).unwrap() - f.value(&scaled).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let g = three_node();
        let mut feats = features();
        feats.remove("C");
        assert_eq!(
            PreferenceReward::new(&g, &feats, SimilarityRule::MinProduct),
            Err(TreeError::MissingFeatures("C".into()))
        );
        let f = PreferenceReward::new(&g, &features(), SimilarityRule::MinProduct).unwrap();
        assert_eq!(f.value(&[0.0, 0.0, 0.0]), Err(TreeError::DegenerateFeatures));
        assert_eq!(f.value(&[1.0, 0.0]), Err(TreeError::DegenerateFeatures));
    }
}
