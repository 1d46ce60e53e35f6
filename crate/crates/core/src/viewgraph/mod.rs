//! Camera view-graphs: nodes carry optional ground-truth absolute
//! orientations, undirected edges carry an observed relative orientation.

mod format;
mod spt;
mod stats;

pub use format::{parse, serialize, serialize_with_comments, FORMAT_HEADER};
pub use spt::{
    bootstrap_orientations, rereference, select_root, shortest_path_tree, spt_init, SpanningTree,
    SpanningTreeInit,
};
pub use stats::{graph_stats, AngleAxisStats, GraphStats};

use std::collections::{HashSet, VecDeque};

use crate::error::{Error, Result};
use crate::so3::UnitQuaternion;

pub type NodeId = usize;

/// An observed relative orientation `q ≈ R_v ⋆ R_u⁻¹`, stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub q: UnitQuaternion,
    pub gt_outlier: Option<bool>,
}

/// One direction of an edge after bidirectional augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectedEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub q: UnitQuaternion,
    /// Index of the undirected edge this direction came from.
    pub edge: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewGraph {
    gt: Vec<Option<UnitQuaternion>>,
    edges: Vec<Edge>,
    // per node: (neighbour, edge index), sorted by neighbour id
    adjacency: Vec<Vec<(NodeId, usize)>>,
}

impl ViewGraph {
    /// Builds a graph over `gt.len()` nodes. Edges given as `u > v` are flipped
    /// to the canonical direction with the inverse orientation.
    pub fn new(gt: Vec<Option<UnitQuaternion>>, edges: Vec<Edge>) -> Result<Self> {
        let n = gt.len();
        let mut seen = HashSet::with_capacity(edges.len());
        let mut canonical = Vec::with_capacity(edges.len());
        for e in edges {
            if e.u >= n || e.v >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({}, {}) references a node outside [0, {n})",
                    e.u, e.v
                )));
            }
            if e.u == e.v {
                return Err(Error::InvalidInput(format!("self-loop on node {}", e.u)));
            }
            let e = if e.u < e.v {
                e
            } else {
                Edge {
                    u: e.v,
                    v: e.u,
                    q: e.q.inverse(),
                    gt_outlier: e.gt_outlier,
                }
            };
            if !seen.insert((e.u, e.v)) {
                return Err(Error::InvalidInput(format!(
                    "duplicate edge between {} and {}",
                    e.u, e.v
                )));
            }
            canonical.push(e);
        }
        let mut adjacency = vec![Vec::new(); n];
        for (i, e) in canonical.iter().enumerate() {
            adjacency[e.u].push((e.v, i));
            adjacency[e.v].push((e.u, i));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(ViewGraph {
            gt,
            edges: canonical,
            adjacency,
        })
    }

    pub fn empty() -> Self {
        ViewGraph {
            gt: Vec::new(),
            edges: Vec::new(),
            adjacency: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.gt.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, i: usize) -> &Edge {
        &self.edges[i]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    /// Neighbours of `v` as `(neighbour, edge index)`, ascending by neighbour.
    pub fn neighbors(&self, v: NodeId) -> &[(NodeId, usize)] {
        &self.adjacency[v]
    }

    pub fn find_edge(&self, a: NodeId, b: NodeId) -> Option<usize> {
        let list = self.adjacency.get(a)?;
        list.binary_search_by_key(&b, |&(n, _)| n)
            .ok()
            .map(|k| list[k].1)
    }

    /// Observed orientation of edge `idx` read in the direction `from -> to`.
    pub fn oriented(&self, idx: usize, from: NodeId) -> UnitQuaternion {
        let e = &self.edges[idx];
        if e.u == from {
            e.q
        } else {
            e.q.inverse()
        }
    }

    pub fn gt(&self, v: NodeId) -> Option<UnitQuaternion> {
        self.gt[v]
    }

    pub fn gt_slice(&self) -> &[Option<UnitQuaternion>] {
        &self.gt
    }

    pub fn has_ground_truth(&self) -> bool {
        self.gt.iter().all(Option::is_some)
    }

    /// All ground-truth orientations, or the first node missing one.
    pub fn ground_truth(&self) -> Result<Vec<UnitQuaternion>> {
        self.gt
            .iter()
            .enumerate()
            .map(|(i, q)| q.ok_or(Error::MissingGroundTruth(i)))
            .collect()
    }

    /// Ground-truth relative orientation `R̂_v ⋆ R̂_u⁻¹`.
    pub fn relative_gt(&self, u: NodeId, v: NodeId) -> Result<UnitQuaternion> {
        let qu = self.gt[u].ok_or(Error::MissingGroundTruth(u))?;
        let qv = self.gt[v].ok_or(Error::MissingGroundTruth(v))?;
        Ok(UnitQuaternion::relative(&qu, &qv))
    }

    /// Same topology with new edge orientations (one per edge, in order).
    pub fn with_edge_orientations(&self, qs: &[UnitQuaternion]) -> Result<Self> {
        if qs.len() != self.edges.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} orientations for {} edges",
                qs.len(),
                self.edges.len()
            )));
        }
        let mut g = self.clone();
        for (e, q) in g.edges.iter_mut().zip(qs) {
            e.q = *q;
        }
        Ok(g)
    }

    /// Keeps the edges for which `keep(index, edge)` holds.
    pub fn filter_edges(&self, mut keep: impl FnMut(usize, &Edge) -> bool) -> Self {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(i, e)| keep(*i, e))
            .map(|(_, e)| *e)
            .collect();
        ViewGraph::new(self.gt.clone(), edges).expect("subset of a valid edge set")
    }

    pub fn without_labels(&self) -> Self {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.gt_outlier = None;
        }
        g
    }

    /// Node-induced subgraph on `keep` (ascending old ids).
    pub fn induced(&self, keep: &[NodeId]) -> Subgraph {
        let mut old_to_new = vec![None; self.n_nodes()];
        for (new, &old) in keep.iter().enumerate() {
            old_to_new[old] = Some(new);
        }
        let gt = keep.iter().map(|&o| self.gt[o]).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|e| {
                Some(Edge {
                    u: old_to_new[e.u]?,
                    v: old_to_new[e.v]?,
                    ..*e
                })
            })
            .collect();
        Subgraph {
            graph: ViewGraph::new(gt, edges).expect("induced subgraph of a valid graph"),
            new_to_old: keep.to_vec(),
            old_to_new,
        }
    }

    /// Connected components (undirected), each sorted ascending, ordered by
    /// their smallest member.
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let n = self.n_nodes();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![start];
            label[start] = id;
            queue.push_back(start);
            while let Some(a) = queue.pop_front() {
                for &(b, _) in &self.adjacency[a] {
                    if label[b] == usize::MAX {
                        label[b] = id;
                        members.push(b);
                        queue.push_back(b);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    pub fn directed_edges(&self) -> Vec<DirectedEdge> {
        augment_bidirectional(self)
    }
}

/// A node-induced subgraph with id maps in both directions.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: ViewGraph,
    pub new_to_old: Vec<NodeId>,
    pub old_to_new: Vec<Option<NodeId>>,
}

impl Subgraph {
    pub fn dropped(&self) -> usize {
        self.old_to_new.len() - self.new_to_old.len()
    }
}

/// Forward directions `u -> v` for every edge (indices `0..E`), followed by
/// the reverse directions carrying the inverse orientation (`E..2E`).
pub fn augment_bidirectional(g: &ViewGraph) -> Vec<DirectedEdge> {
    let fwd = g.edges.iter().enumerate().map(|(i, e)| DirectedEdge {
        src: e.u,
        dst: e.v,
        q: e.q,
        edge: i,
    });
    let rev = g.edges.iter().enumerate().map(|(i, e)| DirectedEdge {
        src: e.v,
        dst: e.u,
        q: e.q.inverse(),
        edge: i,
    });
    fwd.chain(rev).collect()
}

/// Largest connected component; ties go to the component holding the
/// smallest node id.
pub fn largest_component(g: &ViewGraph) -> Subgraph {
    let comps = g.components();
    let best = comps
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
        .map(|(_, c)| c.clone())
        .unwrap_or_default();
    g.induced(&best)
}
