use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SanError};

/// One reaction post in a propagation tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: String,
    pub timestamp_order: i64,
    pub features: Vec<f64>,
}

/// Rooted tree of reactions. Nodes are kept sorted by
/// `(timestamp_order, id)`; edges point from parent to child.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationTree {
    nodes: Vec<TreeNode>,
    /// `(parent_index, child_index)` into `nodes`.
    edges: Vec<(usize, usize)>,
    root: usize,
}

impl PropagationTree {
    /// Validates and canonicalizes a tree. `sample` names the owning sample
    /// in error messages.
    pub fn new(
        sample: &str,
        mut nodes: Vec<TreeNode>,
        edges: &[(String, String)],
        root_id: &str,
    ) -> Result<Self> {
        let fail = |message: String| SanError::Structure {
            sample: sample.to_string(),
            message,
        };
        if nodes.is_empty() {
            return Err(fail("tree has no nodes".into()));
        }
        nodes.sort_by(|a, b| {
            a.timestamp_order
                .cmp(&b.timestamp_order)
                .then_with(|| a.id.cmp(&b.id))
        });
        let dim = nodes[0].features.len();
        let mut index: HashMap<&str, usize> = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.features.len() != dim {
                return Err(fail(format!(
                    "node {} has {} features, expected {dim}",
                    n.id,
                    n.features.len()
                )));
            }
            if n.features.iter().any(|v| !v.is_finite()) {
                return Err(fail(format!("node {} has non-finite features", n.id)));
            }
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(fail(format!("duplicate node id {}", n.id)));
            }
        }
        let root = *index
            .get(root_id)
            .ok_or_else(|| fail(format!("root {root_id} is not a node")))?;
        let mut parent: Vec<Option<usize>> = vec![None; nodes.len()];
        let mut resolved = Vec::with_capacity(edges.len());
        for (p, c) in edges {
            let pi = *index.get(p.as_str()).ok_or_else(|| fail(format!("edge references unknown node {p}")))?;
            let ci = *index.get(c.as_str()).ok_or_else(|| fail(format!("edge references unknown node {c}")))?;
            if parent[ci].replace(pi).is_some() {
                return Err(fail(format!("node {c} has more than one parent")));
            }
            resolved.push((pi, ci));
        }
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| parent[i].is_none()).collect();
        if roots != [root] {
            let names: Vec<&str> = roots.iter().map(|&i| nodes[i].id.as_str()).collect();
            return Err(fail(format!("expected exactly one root {root_id}, found parentless nodes {names:?}")));
        }
        // Every node must reach the root by following parents.
        let mut depth: Vec<Option<usize>> = vec![None; nodes.len()];
        depth[root] = Some(0);
        for start in 0..nodes.len() {
            let mut path = Vec::new();
            let mut cur = start;
            while depth[cur].is_none() {
                if path.len() > nodes.len() {
                    return Err(fail(format!("cycle through node {}", nodes[start].id)));
                }
                path.push(cur);
                cur = parent[cur].expect("only the root lacks a parent");
            }
            let mut d = depth[cur].unwrap();
            for &n in path.iter().rev() {
                d += 1;
                depth[n] = Some(d);
            }
        }
        resolved.sort_unstable();
        Ok(PropagationTree {
            nodes,
            edges: resolved,
            root,
        })
    }

    /// Builds a tree from already-indexed parts (node order is
    /// canonicalized, indices are remapped accordingly).
    pub fn from_parts(sample: &str, nodes: Vec<TreeNode>, edges: &[(usize, usize)], root: usize) -> Result<Self> {
        let named: Vec<(String, String)> = edges
            .iter()
            .map(|&(p, c)| (nodes[p].id.clone(), nodes[c].id.clone()))
            .collect();
        let root_id = nodes[root].id.clone();
        PropagationTree::new(sample, nodes, &named, &root_id)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_node(&self) -> &TreeNode {
        &self.nodes[self.root]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes[0].features.len()
    }

    /// Length of the longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(p, c) in &self.edges {
            children.entry(p).or_default().push(c);
        }
        let mut best = 0;
        let mut stack = vec![(self.root, 0usize)];
        while let Some((n, d)) = stack.pop() {
            best = best.max(d);
            if let Some(cs) = children.get(&n) {
                stack.extend(cs.iter().map(|&c| (c, d + 1)));
            }
        }
        best
    }

    /// Edges as node-id pairs, in canonical order.
    pub fn edge_ids(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|&(p, c)| (self.nodes[p].id.clone(), self.nodes[c].id.clone()))
            .collect()
    }
}
