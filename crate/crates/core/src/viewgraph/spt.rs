use std::collections::VecDeque;

use super::{NodeId, ViewGraph};
use crate::error::{Error, Result};
use crate::so3::UnitQuaternion;

/// Breadth-first shortest-path tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningTree {
    pub root: NodeId,
    /// `None` for the root.
    pub parent: Vec<Option<NodeId>>,
    pub depth: Vec<usize>,
    /// Nodes in non-decreasing depth order, root first.
    pub order: Vec<NodeId>,
}

impl SpanningTree {
    pub fn depth_sum(&self) -> usize {
        self.depth.iter().sum()
    }
}

/// A spanning tree plus the absolute orientations chained along it.
#[derive(Debug, Clone)]
pub struct SpanningTreeInit {
    pub tree: SpanningTree,
    pub orientations: Vec<UnitQuaternion>,
}

/// Node of maximum degree; ties go to the smallest id.
pub fn select_root(g: &ViewGraph) -> Result<NodeId> {
    (0..g.n_nodes())
        .max_by(|&a, &b| g.degree(a).cmp(&g.degree(b)).then(b.cmp(&a)))
        .ok_or(Error::EmptyGraph)
}

/// Shortest-path tree from `root`. Each node's parent is its smallest-id
/// neighbour one level closer to the root.
pub fn shortest_path_tree(g: &ViewGraph, root: NodeId) -> Result<SpanningTree> {
    let n = g.n_nodes();
    if root >= n {
        return Err(Error::IndexOutOfRange { index: root, len: n });
    }
    let mut depth = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    depth[root] = 0;
    queue.push_back(root);
    while let Some(a) = queue.pop_front() {
        order.push(a);
        for &(b, _) in g.neighbors(a) {
            if depth[b] == usize::MAX {
                depth[b] = depth[a] + 1;
                queue.push_back(b);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Disconnected {
            reached: order.len(),
            total: n,
        });
    }
    let parent = (0..n)
        .map(|v| {
            if v == root {
                return None;
            }
            // neighbours are sorted, so the first match is the smallest id
            g.neighbors(v)
                .iter()
                .find(|&&(u, _)| depth[u] + 1 == depth[v])
                .map(|&(u, _)| u)
        })
        .collect();
    Ok(SpanningTree {
        root,
        parent,
        depth,
        order,
    })
}

/// Chains edge orientations outward from the root: `R_v = q_{u→v} ⋆ R_u`.
pub fn bootstrap_orientations(g: &ViewGraph, tree: &SpanningTree) -> Result<SpanningTreeInit> {
    let n = g.n_nodes();
    if tree.parent.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "tree over {} nodes, graph has {n}",
            tree.parent.len()
        )));
    }
    let mut orientations = vec![UnitQuaternion::IDENTITY; n];
    for &v in &tree.order {
        let Some(u) = tree.parent[v] else { continue };
        let idx = g.find_edge(u, v).ok_or_else(|| {
            Error::InvalidInput(format!("tree edge ({u}, {v}) is not an edge of the graph"))
        })?;
        orientations[v] = g.oriented(idx, u).compose(&orientations[u]);
    }
    Ok(SpanningTreeInit {
        tree: tree.clone(),
        orientations,
    })
}

/// Root selection, shortest-path tree and bootstrap in one call.
pub fn spt_init(g: &ViewGraph) -> Result<SpanningTreeInit> {
    let root = select_root(g)?;
    let tree = shortest_path_tree(g, root)?;
    bootstrap_orientations(g, &tree)
}

/// Moves the gauge so that node `c` becomes the identity: `q_v ⋆ q_c⁻¹`.
pub fn rereference(orientations: &[UnitQuaternion], c: NodeId) -> Result<Vec<UnitQuaternion>> {
    let qc = orientations.get(c).ok_or(Error::IndexOutOfRange {
        index: c,
        len: orientations.len(),
    })?;
    let inv = qc.inverse();
    Ok(orientations
        .iter()
        .enumerate()
        .map(|(v, q)| {
            if v == c {
                UnitQuaternion::IDENTITY
            } else {
                q.compose(&inv)
            }
        })
        .collect())
}
