//! Graph storage, normalization, dataset I/O, and client partitioning.
//!
//! [`Graph`] keeps an undirected simple graph in compressed-row form with
//! strictly sorted neighbor lists and no self-loops. [`SparseMatrix`] is the
//! CSR real matrix used for the augmented normalized adjacency
//! `D^{-1/2} (A + I) D^{-1/2}` that every propagation and GCN layer in the
//! crate shares. All types are immutable after construction and safe to
//! share across parallel client workers.

mod bundle;
mod louvain;
mod partition;
mod sparse;

pub use bundle::{load_bundle, save_bundle, serialize_bundle, ClientGraph, DatasetBundle};
pub use louvain::{louvain_partition, modularity};
pub use partition::{induced_subgraph, label_imbalance_split};
pub use sparse::SparseMatrix;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Undirected simple graph in compressed row form.
///
/// Invariants: edge `(u, v)` is stored iff `(v, u)` is, `u != v`, and every
/// neighbor list is strictly ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Build a graph from an edge list, symmetrizing and deduplicating.
    ///
    /// Errors on self-loops and on endpoints outside `[0, num_nodes)`.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut directed = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u == v {
                return Err(Error::Shape(format!("self-loop on node {u}")));
            }
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Shape(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            directed.push((u, v));
            directed.push((v, u));
        }
        directed.sort_unstable();
        directed.dedup();

        let mut offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &directed {
            offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let neighbors = directed.into_iter().map(|(_, v)| v).collect();
        Ok(Graph {
            num_nodes,
            offsets,
            neighbors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Sorted neighbor list of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn mean_degree(&self) -> f64 {
        if self.num_nodes == 0 {
            return 0.0;
        }
        self.neighbors.len() as f64 / self.num_nodes as f64
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| u < v)
                .map(move |&v| (u, v))
        })
    }

    /// Augmented normalized adjacency `D^{-1/2} (A + I) D^{-1/2}` where `D`
    /// is the degree matrix of `A + I`.
    ///
    /// Entry `(i, j)` of an edge is `1/sqrt(d_i d_j)` with `d = degree + 1`;
    /// the diagonal entry is `1/d_i`. An isolated node gets diagonal 1.
    pub fn normalized_adjacency(&self) -> SparseMatrix {
        let n = self.num_nodes;
        let aug_deg: Vec<f64> = (0..n).map(|v| (self.degree(v) + 1) as f64).collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(self.neighbors.len() + n);
        let mut values = Vec::with_capacity(self.neighbors.len() + n);
        offsets.push(0);
        for i in 0..n {
            let mut placed_diag = false;
            for &j in self.neighbors(i) {
                if !placed_diag && j > i {
                    indices.push(i);
                    values.push(1.0 / aug_deg[i]);
                    placed_diag = true;
                }
                indices.push(j);
                values.push(1.0 / (aug_deg[i] * aug_deg[j]).sqrt());
            }
            if !placed_diag {
                indices.push(i);
                values.push(1.0 / aug_deg[i]);
            }
            offsets.push(indices.len());
        }
        SparseMatrix::from_csr(n, n, offsets, indices, values)
    }
}

/// Per-node integer class in `[0, num_classes)` or `-1` for unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<i64>,
    num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<i64>, num_classes: usize) -> Result<Self> {
        for (i, &y) in labels.iter().enumerate() {
            if y < -1 || y >= num_classes as i64 {
                return Err(Error::Shape(format!(
                    "label {y} of node {i} out of range for {num_classes} classes"
                )));
            }
        }
        Ok(LabelVector {
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Label of node `v`, or `None` when unknown.
    pub fn get(&self, v: usize) -> Option<usize> {
        let y = self.labels[v];
        (y >= 0).then_some(y as usize)
    }

    pub fn raw(&self) -> &[i64] {
        &self.labels
    }
}

/// Train / validation / test tag of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Per-node split tags; the tags partition all nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMasks {
    tags: Vec<Split>,
}

impl SplitMasks {
    pub fn new(tags: Vec<Split>) -> Self {
        SplitMasks { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tag(&self, v: usize) -> Split {
        self.tags[v]
    }

    pub fn tags(&self) -> &[Split] {
        &self.tags
    }

    pub fn nodes_with(&self, split: Split) -> Vec<usize> {
        (0..self.tags.len())
            .filter(|&v| self.tags[v] == split)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.tags.iter().filter(|&&t| t == split).count()
    }
}
