use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One node of a binary decision tree. Terminal nodes have no split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Depth k, the root sits at 1.
    pub depth: usize,
    /// Path index as a digit string of length `d_b - 1`.
    pub id: String,
}

impl TreeNode {
    fn leaf() -> Self {
        TreeNode {
            feature: None,
            threshold: 0.0,
            left: None,
            right: None,
            depth: 1,
            id: String::new(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.left.is_none()
    }
}

/// Binary tree stored as a node arena with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    /// Realised maximum depth d_b.
    pub max_depth: usize,
}

impl Default for Tree {
    fn default() -> Self {
        Tree::new()
    }
}

impl Tree {
    /// A single terminal root.
    pub fn new() -> Self {
        let mut t = Tree {
            nodes: vec![TreeNode::leaf()],
            max_depth: 1,
        };
        index_tree(&mut t);
        t
    }

    /// Turns terminal `node` into a split on `x[feature] < threshold` and
    /// returns the (left, right) children. Ids are stale until [`index_tree`].
    pub fn split(&mut self, node: usize, feature: usize, threshold: f64) -> Result<(usize, usize)> {
        let n = self
            .nodes
            .get(node)
            .ok_or_else(|| Error::InvalidInput(format!("no node {node}")))?;
        if !n.is_terminal() {
            return Err(Error::InvalidInput(format!("node {node} is already split")));
        }
        let l = self.nodes.len();
        self.nodes.push(TreeNode::leaf());
        self.nodes.push(TreeNode::leaf());
        let n = &mut self.nodes[node];
        n.feature = Some(feature);
        n.threshold = threshold;
        n.left = Some(l);
        n.right = Some(l + 1);
        Ok((l, l + 1))
    }

    /// Digit-string length L_b = d_b - 1.
    pub fn id_len(&self) -> usize {
        self.max_depth - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Node indices from the root to the terminal reached by `x`.
    pub fn path(&self, x: &[f64]) -> Vec<usize> {
        let mut at = 0;
        let mut out = vec![0];
        while let (Some(f), Some(l), Some(r)) = (
            self.nodes[at].feature,
            self.nodes[at].left,
            self.nodes[at].right,
        ) {
            at = if x[f] < self.nodes[at].threshold {
                l
            } else {
                r
            };
            out.push(at);
        }
        out
    }

    pub fn terminal(&self, x: &[f64]) -> usize {
        let mut at = 0;
        while let (Some(f), Some(l), Some(r)) = (
            self.nodes[at].feature,
            self.nodes[at].left,
            self.nodes[at].right,
        ) {
            at = if x[f] < self.nodes[at].threshold {
                l
            } else {
                r
            };
        }
        at
    }

    pub fn terminals(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_terminal())
    }
}

/// Assigns depths, the realised depth d_b and every node's path index.
///
/// The root gets all zeros. A child at depth k copies its parent's digits
/// and writes 1 (left) or 2 (right) at digit k-1 (counting from 1), which is
/// the decimal recurrence `id_child = id_parent + {1,2} * 10^(d_b - k)` kept
/// as a string so depth never overflows.
pub fn index_tree(tree: &mut Tree) {
    let mut order = vec![0usize];
    tree.nodes[0].depth = 1;
    let mut k = 0;
    while k < order.len() {
        let at = order[k];
        let d = tree.nodes[at].depth;
        for c in [tree.nodes[at].left, tree.nodes[at].right]
            .into_iter()
            .flatten()
        {
            tree.nodes[c].depth = d + 1;
            order.push(c);
        }
        k += 1;
    }
    tree.max_depth = order
        .iter()
        .map(|&n| tree.nodes[n].depth)
        .max()
        .unwrap_or(1);
    let len = tree.max_depth - 1;
    let mut ids = vec![vec![b'0'; len]; tree.nodes.len()];
    for &at in &order {
        let node = &tree.nodes[at];
        // a child at depth k writes digit k - 2 (0-based)
        let pos = node.depth - 1;
        for (c, digit) in [(node.left, b'1'), (node.right, b'2')] {
            if let Some(c) = c {
                let mut id = ids[at].clone();
                id[pos] = digit;
                ids[c] = id;
            }
        }
    }
    for (n, id) in tree.nodes.iter_mut().zip(ids) {
        n.id = String::from_utf8(id).expect("ascii digits");
    }
}
