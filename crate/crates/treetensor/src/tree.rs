//! Labeled ordered trees with bounded outdegree: operator ids on
//! internal nodes, payload vectors on leaves. Nodes live in a flat arena
//! with stable indices.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("node {node}: outdegree {got} exceeds maximum {max}")]
    Outdegree { node: usize, got: usize, max: usize },
    #[error("node {node}: leaf payload has length {got}, expected {expected}")]
    PayloadDim { node: usize, got: usize, expected: usize },
    #[error("node {node}: operator id {op} out of range (have {count})")]
    UnknownOperator { node: usize, op: usize, count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Internal { op: usize, children: Vec<usize> },
    Leaf { payload: Vec<f64> },
}

/// Ordered tree over a flat node arena. Indices are stable for the
/// lifetime of the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    root: usize,
}

impl Tree {
    pub fn leaf(payload: Vec<f64>) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf { payload }],
            root: 0,
        }
    }

    /// Internal node adopting `children` in order.
    pub fn internal(op: usize, children: Vec<Tree>) -> Self {
        let mut nodes = Vec::new();
        let mut child_roots = Vec::with_capacity(children.len());
        for child in children {
            let offset = nodes.len();
            child_roots.push(child.root + offset);
            for node in child.nodes {
                nodes.push(match node {
                    TreeNode::Internal { op, children } => TreeNode::Internal {
                        op,
                        children: children.into_iter().map(|c| c + offset).collect(),
                    },
                    leaf => leaf,
                });
            }
        }
        let root = nodes.len();
        nodes.push(TreeNode::Internal {
            op,
            children: child_roots,
        });
        Self { nodes, root }
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, idx: usize) -> &TreeNode {
        &self.nodes[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Children of a node (empty for leaves).
    pub fn children(&self, idx: usize) -> &[usize] {
        match &self.nodes[idx] {
            TreeNode::Internal { children, .. } => children,
            TreeNode::Leaf { .. } => &[],
        }
    }

    /// Node indices with every child before its parent.
    pub fn postorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, false)];
        while let Some((idx, expanded)) = stack.pop() {
            if expanded {
                order.push(idx);
            } else {
                stack.push((idx, true));
                for &c in self.children(idx).iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        order
    }

    /// Number of nodes on the longest root-to-leaf path (a single leaf
    /// has depth 1).
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        for idx in self.postorder() {
            let d = self
                .children(idx)
                .iter()
                .map(|&c| depth[c])
                .max()
                .unwrap_or(0);
            depth[idx] = d + 1;
        }
        depth[self.root]
    }

    pub fn max_outdegree(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                TreeNode::Internal { children, .. } => children.len(),
                TreeNode::Leaf { .. } => 0,
            })
            .max()
            .unwrap_or(0)
    }

    /// Number of internal (operator) nodes.
    pub fn operator_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Internal { .. }))
            .count()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.len() - self.operator_count()
    }

    /// Checks outdegree, payload dimensions, and operator ids.
    pub fn validate(
        &self,
        max_outdegree: usize,
        payload_dim: usize,
        operator_count: usize,
    ) -> Result<(), TreeError> {
        for (idx, node) in self.nodes.iter().enumerate() {
            match node {
                TreeNode::Internal { op, children } => {
                    if children.len() > max_outdegree {
                        return Err(TreeError::Outdegree {
                            node: idx,
                            got: children.len(),
                            max: max_outdegree,
                        });
                    }
                    if *op >= operator_count {
                        return Err(TreeError::UnknownOperator {
                            node: idx,
                            op: *op,
                            count: operator_count,
                        });
                    }
                }
                TreeNode::Leaf { payload } => {
                    if payload.len() != payload_dim {
                        return Err(TreeError::PayloadDim {
                            node: idx,
                            got: payload.len(),
                            expected: payload_dim,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
