use serde::{Deserialize, Serialize};

use super::matrix::{is_missing, FeatureMatrix};

pub const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub missing_left: bool,
    pub left: u32,
    pub right: u32,
    /// Newton value −G/(H+λ); the prediction for leaves.
    pub value: f64,
    /// Split objective gain (0 for leaves).
    pub gain: f64,
    /// Sum of hessians of the node's training rows.
    pub cover: f64,
    pub n_rows: u32,
}

impl Node {
    pub fn leaf(value: f64, cover: f64, n_rows: u32) -> Self {
        Node {
            feature: 0,
            threshold: 0.0,
            missing_left: true,
            left: NO_CHILD,
            right: NO_CHILD,
            value,
            gain: 0.0,
            cover,
            n_rows,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.left == NO_CHILD
    }
}

/// Array-encoded binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>) -> Option<Self> {
        let tree = Tree { nodes };
        tree.is_valid().then_some(tree)
    }

    pub fn single_leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::leaf(value, 0.0, 0)],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Binary, acyclic, every non-root node has exactly one parent that
    /// precedes it, leaf values finite.
    pub fn is_valid(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut parents = vec![0u32; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if n.is_leaf() {
                if n.right != NO_CHILD || !n.value.is_finite() {
                    return false;
                }
                continue;
            }
            for c in [n.left, n.right] {
                let c = c as usize;
                if c <= i || c >= self.nodes.len() {
                    return false;
                }
                parents[c] += 1;
            }
        }
        parents[0] == 0 && parents[1..].iter().all(|&p| p == 1)
    }

    pub fn leaf_index(&self, value_of: impl Fn(usize) -> f64) -> usize {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.is_leaf() {
                return i;
            }
            let v = value_of(n.feature as usize);
            let go_left = if is_missing(v) {
                n.missing_left
            } else {
                v <= n.threshold
            };
            i = if go_left { n.left } else { n.right } as usize;
        }
    }

    pub fn predict(&self, value_of: impl Fn(usize) -> f64) -> f64 {
        self.nodes[self.leaf_index(value_of)].value
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict(|f| row[f])
    }

    pub fn predict_in(&self, features: &FeatureMatrix, row: usize) -> f64 {
        self.predict(|f| features.get(row, f))
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter(|n| !n.is_leaf())
            .map(|n| n.feature as usize)
            .max()
    }

    /// Adds each split's gain to `gains[feature]`, in node order.
    pub fn accumulate_gains(&self, gains: &mut [f64]) {
        for n in &self.nodes {
            if !n.is_leaf() {
                gains[n.feature as usize] += n.gain;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::MISSING_SENTINEL;

    fn stump() -> Tree {
        let mut root = Node::leaf(0.0, 4.0, 4);
        root.feature = 1;
        root.threshold = 0.5;
        root.left = 1;
        root.right = 2;
        root.gain = 3.0;
        Tree::from_nodes(vec![root, Node::leaf(-1.0, 2.0, 2), Node::leaf(2.0, 2.0, 2)]).unwrap()
    }

    #[test]
    fn routing() {
        let t = stump();
        assert_eq!(t.predict_row(&[9.0, 0.0]), -1.0);
        assert_eq!(t.predict_row(&[9.0, 0.5]), -1.0);
        assert_eq!(t.predict_row(&[9.0, 0.7]), 2.0);
        assert_eq!(t.predict_row(&[9.0, MISSING_SENTINEL]), -1.0);
        assert_eq!(t.predict_row(&[9.0, f64::NAN]), -1.0);
        let single = Tree::single_leaf(0.25);
        assert_eq!(single.predict_row(&[1.0, 2.0]), 0.25);
    }

    #[test]
    fn invalid_structures_are_rejected() {
        let mut root = Node::leaf(0.0, 1.0, 1);
        root.left = 0;
        root.right = 1;
        assert!(Tree::from_nodes(vec![root, Node::leaf(1.0, 1.0, 1)]).is_none());
        assert!(Tree::from_nodes(vec![Node::leaf(f64::NAN, 1.0, 1)]).is_none());
        assert!(Tree::from_nodes(vec![]).is_none());
    }

    #[test]
    fn gains_accumulate_on_split_feature() {
        let mut g = vec![0.0; 2];
        stump().accumulate_gains(&mut g);
        assert_eq!(g, vec![0.0, 3.0]);
    }
}
