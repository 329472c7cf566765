//! Depth-limited binary regression trees.
//!
//! Routing is `x[feature] <= threshold` goes left, otherwise right. Ties go
//! left so serialized trees evaluate identically everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn leaf(value: f64) -> Self {
        TreeNode::Leaf { value }
    }

    pub fn split(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                left,
                right,
                ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }

    fn all_finite(&self) -> bool {
        match self {
            TreeNode::Leaf { value } => value.is_finite(),
            TreeNode::Split {
                threshold,
                left,
                right,
                ..
            } => threshold.is_finite() && left.all_finite() && right.all_finite(),
        }
    }

    fn scale(&mut self, c: f64) {
        match self {
            TreeNode::Leaf { value } => *value *= c,
            TreeNode::Split { left, right, .. } => {
                left.scale(c);
                right.scale(c);
            }
        }
    }

    fn leaves(&self, out: &mut Vec<f64>) {
        match self {
            TreeNode::Leaf { value } => out.push(*value),
            TreeNode::Split { left, right, .. } => {
                left.leaves(out);
                right.leaves(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub max_depth: usize,
    pub root: TreeNode,
}

impl RegressionTree {
    pub fn new(root: TreeNode, max_depth: usize) -> Result<Self> {
        let tree = Self { max_depth, root };
        tree.validate()?;
        Ok(tree)
    }

    pub fn constant(value: f64) -> Self {
        Self {
            max_depth: 0,
            root: TreeNode::leaf(value),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.root.depth();
        if depth > self.max_depth {
            return Err(Error::InvalidData(format!(
                "tree depth {depth} exceeds max_depth {}",
                self.max_depth
            )));
        }
        if !self.root.all_finite() {
            return Err(Error::InvalidData("non-finite tree parameter".into()));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Smallest input dimension the tree can route.
    pub fn min_input_dim(&self) -> usize {
        self.root.max_feature().map_or(0, |f| f + 1)
    }

    /// Evaluates the tree. The caller guarantees `x` is long enough.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.root.leaves(&mut out);
        out
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.root.scale(c);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_route_left() {
        let t = RegressionTree::new(
            TreeNode::split(0, 2.0, TreeNode::leaf(1.0), TreeNode::leaf(5.0)),
            1,
        )
        .unwrap();
        assert_eq!(t.predict(&[2.0]), 1.0);
        assert_eq!(t.predict(&[2.0 + 1e-12]), 5.0);
        assert_eq!(t.min_input_dim(), 1);
    }

    #[test]
    fn depth_limit_enforced() {
        let root = TreeNode::split(
            0,
            0.0,
            TreeNode::split(1, 0.0, TreeNode::leaf(0.0), TreeNode::leaf(1.0)),
            TreeNode::leaf(2.0),
        );
        assert!(RegressionTree::new(root.clone(), 1).is_err());
        assert_eq!(RegressionTree::new(root, 2).unwrap().depth(), 2);
    }

    #[test]
    fn nested_json_shape() {
        let t = RegressionTree::new(
            TreeNode::split(0, 2.5, TreeNode::leaf(0.0), TreeNode::leaf(5.0)),
            1,
        )
        .unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["root"]["feature"], 0);
        assert_eq!(v["root"]["right"]["value"], 5.0);
        let back: RegressionTree = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }
}
