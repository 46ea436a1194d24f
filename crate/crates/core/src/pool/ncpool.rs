use std::cmp::Ordering;

use ndarray::Array2;

use super::kmeans::KmeansModel;
use crate::error::{Error, Result};
use crate::graph::{Adjacency, SnnTable};
use crate::tensor::{Tape, Var};

/// A pooled graph: the kept nodes, their gated features and the subgraph
/// they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledGraph {
    /// Original node ids, in selection order.
    pub selected: Vec<usize>,
    /// Rows of the input features for `selected`, each scaled by its gate.
    pub features: Array2<f64>,
    /// `A[selected, selected]`.
    pub adjacency: Adjacency,
    /// Raw selection score of each selected node.
    pub scores: Vec<f64>,
    /// Multiplier applied to each selected row.
    pub gates: Vec<f64>,
}

impl PooledGraph {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Keeps every node with unit gates.
    pub fn identity(h: &Array2<f64>, adj: &Adjacency) -> Self {
        let n = h.nrows();
        Self {
            selected: (0..n).collect(),
            features: h.clone(),
            adjacency: adj.clone(),
            scores: vec![0.0; n],
            gates: vec![1.0; n],
        }
    }

    /// Builds the gated rows `H[idx] ⊙ gate` on the tape. Selection and
    /// gates are constants, so gradients reach `h` only through the
    /// product.
    pub fn gate_on_tape(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let rows = tape.gather_rows(h, self.selected.clone())?;
        let gates = tape.constant(Array2::from_shape_vec((self.len(), 1), self.gates.clone()).expect("one gate per row"));
        tape.mul(rows, gates)
    }
}

/// `⌈k·n⌉`, computed so that decimal ratios such as `0.7` times `10` give
/// `7` rather than `8` from floating-point excess.
pub fn pooled_size(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::contract(format!("pooling ratio {ratio} is outside (0, 1]")));
    }
    let exact = ratio * n as f64;
    let nearest = exact.round();
    let size = if (exact - nearest).abs() <= 1e-9 * exact.max(1.0) {
        nearest
    } else {
        exact.ceil()
    } as usize;
    if size == 0 {
        return Err(Error::contract(format!("ratio {ratio} keeps no node of {n}")));
    }
    Ok(size)
}

/// Per-node score: squared distance of the node to its nearest center
/// plus the squared distance of its SNN-nearest neighbor to that same
/// center.
pub fn node_scores(h: &Array2<f64>, km: &KmeansModel, snn: &SnnTable) -> Result<Vec<f64>> {
    if snn.num_nodes() != h.nrows() {
        return Err(Error::contract(format!(
            "SNN table covers {} nodes, embedding has {}",
            snn.num_nodes(),
            h.nrows()
        )));
    }
    if km.centers.ncols() != h.ncols() {
        return Err(Error::Dimension {
            op: "node_scores",
            left: h.dim(),
            right: km.centers.dim(),
        });
    }
    Ok(h.rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let (c, own) = km.nearest_center(row);
            let neighbor = h.row(snn.nearest_neighbor(i));
            let center = km.centers.row(c);
            let other: f64 = neighbor.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            own + other
        })
        .collect())
}

/// Indices of the `size` entries ordered by `cmp`, ties by index.
pub(crate) fn rank(values: &[f64], size: usize, cmp: impl Fn(f64, f64) -> Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp(values[a], values[b]).then(a.cmp(&b)));
    order.truncate(size);
    order
}

pub(crate) fn assemble(h: &Array2<f64>, adj: &Adjacency, selected: Vec<usize>, scores: Vec<f64>, gates: Vec<f64>) -> PooledGraph {
    let mut features = crate::tensor::take_rows(h, &selected);
    for (mut row, &g) in features.rows_mut().into_iter().zip(&gates) {
        row *= g;
    }
    PooledGraph {
        adjacency: adj.induced(&selected),
        selected,
        features,
        scores,
        gates,
    }
}

/// Neighbor-cluster pooling: keeps the `⌈k·N⌉` nodes with the smallest
/// score, gates each kept row by `1 / (1 + S_i)`, and induces the
/// subgraph on them.
pub fn ncpool(h: &Array2<f64>, adj: &Adjacency, ratio: f64, km: &KmeansModel, snn: &SnnTable) -> Result<PooledGraph> {
    if adj.num_nodes() != h.nrows() {
        return Err(Error::contract("adjacency and embedding disagree on node count"));
    }
    let size = pooled_size(h.nrows(), ratio)?;
    let all_scores = node_scores(h, km, snn)?;
    let selected = rank(&all_scores, size, |a, b| a.total_cmp(&b));
    let scores: Vec<f64> = selected.iter().map(|&i| all_scores[i]).collect();
    let gates = scores.iter().map(|s| 1.0 / (1.0 + s)).collect();
    Ok(assemble(h, adj, selected, scores, gates))
}
