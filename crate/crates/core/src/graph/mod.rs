//! Attributed graphs: node features, undirected topology and optional
//! ground-truth classes.

mod io;
mod sbm;
mod snn;

pub use io::{
    load_citation_dataset, save_citation_dataset, write_edge_list, write_feature_matrix, LoadWarnings,
};
pub use sbm::{generate_sbm, inject_noise_edges, SbmParams};
pub use snn::{compute_snn, SnnTable};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Symmetric, loop-free adjacency stored as sorted neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Builds the adjacency of `num_nodes` nodes from undirected pairs.
    /// Self-loops and repeated pairs are dropped.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::contract(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u == v {
                continue;
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    /// Strict neighborhood of `node`, sorted ascending.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(lo, hi)` in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut dense = Array2::zeros((n, n));
        for (u, list) in self.neighbors.iter().enumerate() {
            for &v in list {
                dense[[u, v]] = 1.0;
            }
        }
        dense
    }

    /// Subgraph induced on `nodes`; position `p` in the result stands for
    /// original node `nodes[p]`.
    pub fn induced(&self, nodes: &[usize]) -> Adjacency {
        let mut position = vec![usize::MAX; self.num_nodes()];
        for (p, &node) in nodes.iter().enumerate() {
            position[node] = p;
        }
        let neighbors = nodes
            .iter()
            .map(|&node| {
                let mut list: Vec<usize> = self.neighbors[node]
                    .iter()
                    .filter_map(|&v| (position[v] != usize::MAX).then_some(position[v]))
                    .collect();
                list.sort_unstable();
                list
            })
            .collect();
        Adjacency { neighbors }
    }
}

/// A graph `G = {V, E, X}` plus optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    features: Array2<f64>,
    adjacency: Adjacency,
    labels: Option<Vec<usize>>,
    node_ids: Vec<String>,
    class_names: Vec<String>,
}

impl AttributedGraph {
    /// Validates and normalizes a graph. Edge pairs may be given in any
    /// orientation; duplicates and self-loops are discarded.
    pub fn new(
        features: Array2<f64>,
        edges: &[(usize, usize)],
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptyInput("graph has no nodes".into()));
        }
        let adjacency = Adjacency::from_edges(n, edges)?;
        let class_names = match &labels {
            Some(labels) => {
                if labels.len() != n {
                    return Err(Error::contract(format!(
                        "{} labels for {n} nodes",
                        labels.len()
                    )));
                }
                let classes = labels.iter().max().map_or(0, |&m| m + 1);
                (0..classes).map(|c| c.to_string()).collect()
            }
            None => Vec::new(),
        };
        Ok(Self {
            features,
            adjacency,
            labels,
            node_ids: (0..n).map(|i| i.to_string()).collect(),
            class_names,
        })
    }

    /// Replaces the external node identifiers used by exports.
    pub fn with_node_ids(mut self, node_ids: Vec<String>) -> Result<Self> {
        if node_ids.len() != self.num_nodes() {
            return Err(Error::contract("node id count differs from node count"));
        }
        self.node_ids = node_ids;
        Ok(self)
    }

    pub fn with_class_names(mut self, class_names: Vec<String>) -> Result<Self> {
        if let Some(labels) = &self.labels {
            if labels.iter().any(|&l| l >= class_names.len()) {
                return Err(Error::contract("label index outside class name table"));
            }
        }
        self.class_names = class_names;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.num_edges()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency.edges().collect()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of ground-truth classes, if labels are present.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|_| self.class_names.len())
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Self> {
        Ok(Self {
            adjacency: Adjacency::from_edges(self.num_nodes(), edges)?,
            ..self.clone()
        })
    }
}
