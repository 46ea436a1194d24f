use ndarray::{Array1, Array2};

use super::ncpool::{assemble, pooled_size, rank, PooledGraph};
use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::tensor::{Tape, Var};

/// Scalar projections `y = H p / ‖p‖`.
pub fn projection_scores(h: &Array2<f64>, p: &Array1<f64>) -> Result<Array1<f64>> {
    if p.len() != h.ncols() {
        return Err(Error::Dimension {
            op: "topk projection",
            left: h.dim(),
            right: (p.len(), 1),
        });
    }
    let norm = p.dot(p).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Domain {
            op: "topk projection",
            message: "projection vector has zero or non-finite norm".into(),
        });
    }
    Ok(h.dot(p) / norm)
}

/// gPool-style baseline: keeps the `⌈k·N⌉` nodes with the largest
/// projection and gates each kept row by `tanh(y)`.
pub fn topk_pool_baseline(h: &Array2<f64>, adj: &Adjacency, ratio: f64, p: &Array1<f64>) -> Result<PooledGraph> {
    if adj.num_nodes() != h.nrows() {
        return Err(Error::contract("adjacency and embedding disagree on node count"));
    }
    let size = pooled_size(h.nrows(), ratio)?;
    let y = projection_scores(h, p)?;
    let y = y.as_slice().expect("contiguous");
    let selected = rank(y, size, |a, b| b.total_cmp(&a));
    let scores: Vec<f64> = selected.iter().map(|&i| y[i]).collect();
    let gates = scores.iter().map(|s| s.tanh()).collect();
    Ok(assemble(h, adj, selected, scores, gates))
}

/// Gated rows `H[idx] ⊙ tanh(H[idx] p / ‖p‖)` on the tape, so that the
/// projection `p` (a `d × 1` column) receives gradients through the gate.
pub fn topk_gate_on_tape(tape: &mut Tape, h: Var, p: Var, selected: &[usize]) -> Result<Var> {
    let rows = tape.gather_rows(h, selected.to_vec())?;
    let y = tape.matmul(rows, p)?;
    let sq = tape.frobenius_sq(p);
    let norm = tape.powf(sq, 0.5);
    let inv = tape.powf(norm, -1.0);
    let y = tape.mul(y, inv)?;
    let gate = tape.tanh(y);
    tape.mul(rows, gate)
}
