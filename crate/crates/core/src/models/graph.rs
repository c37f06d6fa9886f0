use std::rc::Rc;

use crate::data::NewsSample;
use crate::error::{Result, SanError};
use crate::numerics::{Neighborhoods, SparseMatrix, Tensor};

use super::EncoderKind;

/// Node-level inputs for a batch of samples, stacked into one disjoint
/// union graph. A sample without a tree contributes a single node holding
/// its content features.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub features: Tensor,
    /// `(first_node, node_count)` per sample.
    pub segments: Rc<Vec<(usize, usize)>>,
    /// `D^-1/2 (A + I) D^-1/2` over the undirected trees.
    pub symmetric: Option<Rc<SparseMatrix>>,
    /// Row-normalized `(A + I)` with messages flowing parent to child.
    pub top_down: Option<Rc<SparseMatrix>>,
    /// Row-normalized `(A + I)` with messages flowing child to parent.
    pub bottom_up: Option<Rc<SparseMatrix>>,
    /// Undirected neighborhoods including self-loops.
    pub neighborhoods: Option<Rc<Neighborhoods>>,
    pub has_structure: Vec<bool>,
}

impl GraphBatch {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn build(kind: EncoderKind, d_in: usize, samples: &[&NewsSample]) -> Result<GraphBatch> {
        if samples.is_empty() {
            return Err(SanError::InsufficientData("empty batch".into()));
        }
        let mut features = Vec::new();
        let mut segments = Vec::with_capacity(samples.len());
        let mut edges: Vec<(usize, usize)> = Vec::new();
        let mut has_structure = Vec::with_capacity(samples.len());
        let mut n = 0usize;
        for s in samples {
            if s.x.len() != d_in {
                return Err(SanError::dim("encode", &[s.x.len()], &[d_in]));
            }
            let start = n;
            match (&s.tree, kind) {
                (Some(tree), k) if k != EncoderKind::Content => {
                    if tree.feature_dim() != d_in {
                        return Err(SanError::dim("encode", &[tree.feature_dim()], &[d_in]));
                    }
                    for node in tree.nodes() {
                        features.extend_from_slice(&node.features);
                    }
                    edges.extend(tree.edges().iter().map(|&(p, c)| (start + p, start + c)));
                    n += tree.len();
                }
                _ => {
                    features.extend_from_slice(&s.x);
                    n += 1;
                }
            }
            segments.push((start, n - start));
            has_structure.push(s.tree.is_some());
        }
        let features = Tensor::new(vec![n, d_in], features)?;
        let mut batch = GraphBatch {
            features,
            segments: Rc::new(segments),
            symmetric: None,
            top_down: None,
            bottom_up: None,
            neighborhoods: None,
            has_structure,
        };
        match kind {
            EncoderKind::Content => {}
            EncoderKind::Gcn => batch.symmetric = Some(Rc::new(symmetric_norm(n, &edges))),
            EncoderKind::Gat => batch.neighborhoods = Some(Rc::new(neighborhoods(n, &edges))),
            EncoderKind::Bigcn => {
                batch.top_down = Some(Rc::new(directed_norm(n, &edges, false)));
                batch.bottom_up = Some(Rc::new(directed_norm(n, &edges, true)));
            }
        }
        Ok(batch)
    }
}

pub fn symmetric_norm(n: usize, edges: &[(usize, usize)]) -> SparseMatrix {
    let mut degree = vec![1.0f64; n];
    for &(p, c) in edges {
        degree[p] += 1.0;
        degree[c] += 1.0;
    }
    let inv: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut trip = Vec::with_capacity(n + 2 * edges.len());
    for i in 0..n {
        trip.push((i, i, inv[i] * inv[i]));
    }
    for &(p, c) in edges {
        let w = inv[p] * inv[c];
        trip.push((p, c, w));
        trip.push((c, p, w));
    }
    SparseMatrix::from_triplets(n, n, trip)
}

/// Each row averages the node itself and its in-neighbors. With
/// `reversed`, edges are flipped so parents aggregate their children.
pub fn directed_norm(n: usize, edges: &[(usize, usize)], reversed: bool) -> SparseMatrix {
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(p, c) in edges {
        let (src, dst) = if reversed { (c, p) } else { (p, c) };
        incoming[dst].push(src);
    }
    let mut trip = Vec::with_capacity(n + edges.len());
    for (i, srcs) in incoming.iter().enumerate() {
        let w = 1.0 / (srcs.len() + 1) as f64;
        trip.push((i, i, w));
        trip.extend(srcs.iter().map(|&s| (i, s, w)));
    }
    SparseMatrix::from_triplets(n, n, trip)
}

pub fn neighborhoods(n: usize, edges: &[(usize, usize)]) -> Neighborhoods {
    let mut lists: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(p, c) in edges {
        lists[p].push(c);
        lists[c].push(p);
    }
    Neighborhoods::new(lists)
}
