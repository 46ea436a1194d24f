//! Training objectives: inner-product graph reconstruction, Student's-t
//! soft assignment, the sharpened target distribution and the KL
//! clustering loss.
//!
//! Each objective exists twice: a plain function over arrays, used for
//! evaluation and as a reference, and a tape version used in training.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::tensor::{Tape, Var};

/// Floor applied to soft-assignment entries before taking logarithms.
pub const Q_FLOOR: f64 = 1e-12;

/// Floor and ceiling applied to predicted edge probabilities.
pub const PROBABILITY_CLAMP: f64 = 1e-7;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Predicted adjacency `sigmoid(z zᵀ)`.
pub fn reconstruct(z: &Array2<f64>) -> Array2<f64> {
    z.dot(&z.t()).mapv(sigmoid)
}

/// `A + I` as a dense 0/1 matrix: the reconstruction target.
pub fn reconstruction_target(adj: &Adjacency) -> Array2<f64> {
    let mut target = adj.to_dense();
    target.diag_mut().fill(1.0);
    target
}

/// `#zeros / #ones` of a 0/1 target, or 1 when there are no zeros.
pub fn positive_weight(target: &Array2<f64>) -> f64 {
    let ones = target.iter().filter(|&&t| t > 0.5).count();
    let zeros = target.len() - ones;
    if ones == 0 || zeros == 0 {
        1.0
    } else {
        zeros as f64 / ones as f64
    }
}

/// Mean positively reweighted binary cross-entropy between a predicted
/// adjacency and a binary reference. The reference diagonal is treated as
/// 1 regardless of its stored value.
pub fn reconstruction_loss(predicted: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    if predicted.dim() != reference.dim() || !predicted.is_square() {
        return Err(Error::Dimension {
            op: "reconstruction_loss",
            left: predicted.dim(),
            right: reference.dim(),
        });
    }
    let mut target = reference.clone();
    target.diag_mut().fill(1.0);
    let weight = positive_weight(&target);
    let total = Zip::from(predicted).and(&target).fold(0.0, |acc, &p, &t| {
        let p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
        acc - (weight * t * p.ln() + (1.0 - t) * (1.0 - p).ln())
    });
    Ok(total / target.len() as f64)
}

/// Reconstruction loss of `sigmoid(z zᵀ)` against `A + I`, on the tape.
pub fn reconstruction_loss_tape(tape: &mut Tape, z: Var, adj: &Adjacency) -> Result<Var> {
    if tape.shape(z).0 != adj.num_nodes() {
        return Err(Error::Dimension {
            op: "reconstruction_loss",
            left: tape.shape(z),
            right: (adj.num_nodes(), adj.num_nodes()),
        });
    }
    let target = reconstruction_target(adj);
    let weight = positive_weight(&target);
    let zt = tape.transpose(z);
    let logits = tape.matmul(z, zt)?;
    tape.bce_with_logits(logits, Arc::new(target), weight)
}

fn squared_distances(z: &Array2<f64>, centers: &Array2<f64>) -> Array2<f64> {
    let mut d = Array2::zeros((z.nrows(), centers.nrows()));
    for (i, zi) in z.rows().into_iter().enumerate() {
        for (j, mu) in centers.rows().into_iter().enumerate() {
            d[[i, j]] = zi.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    d
}

fn check_centers(z: (usize, usize), centers: (usize, usize)) -> Result<()> {
    if centers.0 == 0 || z.1 != centers.1 {
        return Err(Error::Dimension {
            op: "soft_assign",
            left: z,
            right: centers,
        });
    }
    Ok(())
}

/// Student's-t (one degree of freedom) soft assignment of each row of `z`
/// to each center, row-normalized.
pub fn soft_assign(z: &Array2<f64>, centers: &Array2<f64>) -> Result<Array2<f64>> {
    check_centers(z.dim(), centers.dim())?;
    let mut q = squared_distances(z, centers).mapv(|d| 1.0 / (1.0 + d));
    for mut row in q.rows_mut() {
        let total = row.sum();
        row /= total;
    }
    Ok(q)
}

/// Tape version of [`soft_assign`]; gradients reach both `z` and the
/// centers.
pub fn soft_assign_tape(tape: &mut Tape, z: Var, centers: Var) -> Result<Var> {
    check_centers(tape.shape(z), tape.shape(centers))?;
    // ‖z_i − μ_j‖² = ‖z_i‖² + ‖μ_j‖² − 2 z_i·μ_j
    let zz = tape.mul(z, z)?;
    let z_sq = tape.sum_rows(zz);
    let mm = tape.mul(centers, centers)?;
    let mu_sq = tape.sum_rows(mm);
    let mu_sq = tape.transpose(mu_sq);
    let mu_t = tape.transpose(centers);
    let cross = tape.matmul(z, mu_t)?;
    let cross = tape.scale(cross, -2.0);
    let dist = tape.add(cross, z_sq)?;
    let dist = tape.add(dist, mu_sq)?;
    // Cancellation can leave tiny negative distances.
    let dist = tape.clamp_min(dist, 0.0);
    let kernel = tape.add_scalar(dist, 1.0);
    let kernel = tape.powf(kernel, -1.0);
    let totals = tape.sum_rows(kernel);
    let inv = tape.powf(totals, -1.0);
    tape.mul(kernel, inv)
}

/// Sharpened target `p_ij ∝ q_ij² / f_j` with cluster frequency
/// `f_j = Σ_i q_ij`, row-normalized.
pub fn target_distribution(q: &Array2<f64>) -> Array2<f64> {
    let freq = q.sum_axis(Axis(0));
    let mut p = q.clone();
    for mut row in p.rows_mut() {
        for (v, &f) in row.iter_mut().zip(&freq) {
            *v = *v * *v / f;
        }
        let total = row.sum();
        row /= total;
    }
    p
}

/// `KL(P‖Q) = Σ_i Σ_j p_ij ln(p_ij / q_ij)` with `0 ln 0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub value: f64,
    /// Entries of `Q` raised to [`Q_FLOOR`].
    pub clamped: usize,
}

fn p_log_p(p: &Array2<f64>) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum()
}

pub fn clustering_loss(p: &Array2<f64>, q: &Array2<f64>) -> Result<Divergence> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension {
            op: "clustering_loss",
            left: p.dim(),
            right: q.dim(),
        });
    }
    let mut clamped = 0;
    let cross: f64 = Zip::from(p).and(q).fold(0.0, |acc, &p, &q| {
        if q < Q_FLOOR {
            clamped += 1;
        }
        if p > 0.0 {
            acc + p * q.max(Q_FLOOR).ln()
        } else {
            acc
        }
    });
    if clamped > 0 {
        log::warn!("clustering loss: clamped {clamped} soft-assignment entries to {Q_FLOOR}");
    }
    Ok(Divergence {
        value: p_log_p(p) - cross,
        clamped,
    })
}

/// Tape version of [`clustering_loss`] with `P` held constant. Returns the
/// loss node and the number of clamped `Q` entries.
pub fn clustering_loss_tape(tape: &mut Tape, p: &Array2<f64>, q: Var) -> Result<(Var, usize)> {
    if p.dim() != tape.shape(q) {
        return Err(Error::Dimension {
            op: "clustering_loss",
            left: p.dim(),
            right: tape.shape(q),
        });
    }
    let clamped = tape.value(q).iter().filter(|&&x| x < Q_FLOOR).count();
    let floored = tape.clamp_min(q, Q_FLOOR);
    let log_q = tape.log(floored)?;
    let p_const = tape.constant(p.clone());
    let weighted = tape.mul(p_const, log_q)?;
    let cross = tape.sum(weighted);
    let neg = tape.scale(cross, -1.0);
    Ok((tape.add_scalar(neg, p_log_p(p)), clamped))
}

/// `L = L_r + λ L_c`.
pub fn total_loss(reconstruction: f64, clustering: f64, lambda: f64) -> f64 {
    reconstruction + lambda * clustering
}

pub fn total_loss_tape(tape: &mut Tape, reconstruction: Var, clustering: Var, lambda: f64) -> Result<Var> {
    let weighted = tape.scale(clustering, lambda);
    tape.add(reconstruction, weighted)
}

/// Mean negative log-likelihood of `labels` under the softmax of the
/// `rows` of `logits`.
pub fn cross_entropy_tape(tape: &mut Tape, logits: Var, rows: &[usize], labels: &[usize]) -> Result<Var> {
    if rows.len() != labels.len() || rows.is_empty() {
        return Err(Error::contract(format!(
            "cross entropy needs one label per row, got {} rows and {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let classes = tape.shape(logits).1;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!("label {bad} outside {classes} classes")));
    }
    let picked = tape.gather_rows(logits, rows.to_vec())?;
    let log_p = tape.log_softmax_rows(picked);
    let mut one_hot = Array2::zeros((rows.len(), classes));
    for (r, &l) in labels.iter().enumerate() {
        one_hot[[r, l]] = 1.0;
    }
    let one_hot = tape.constant(one_hot);
    let picked = tape.mul(log_p, one_hot)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / rows.len() as f64))
}

/// Row-wise argmax, lowest index on ties.
pub fn hard_labels(q: &Array2<f64>) -> Vec<usize> {
    q.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Trainable centers together with the assignment distributions they
/// induce on the current embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub centers: Array2<f64>,
    pub q: Array2<f64>,
    pub p: Array2<f64>,
    pub hard_labels: Vec<usize>,
}

impl ClusterState {
    pub fn from_embedding(z: &Array2<f64>, centers: Array2<f64>) -> Result<Self> {
        let q = soft_assign(z, &centers)?;
        let p = target_distribution(&q);
        let hard_labels = hard_labels(&q);
        Ok(Self {
            centers,
            q,
            p,
            hard_labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_embedding_reconstructs_one_half() {
        let a = reconstruct(&Array2::zeros((4, 3)));
        assert!(a.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn orthonormal_rows_reconstruct_analytically() {
        let a = reconstruct(&Array2::eye(3));
        let s1 = 1.0 / (1.0 + (-1.0f64).exp());
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { s1 } else { 0.5 };
                assert!(close(a[[i, j]], expected, 1e-15));
            }
        }
        assert!(close(s1, 0.731, 1e-3));
    }

    #[test]
    fn reconstruction_matches_reference_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = Array2::from_shape_simple_fn((5, 3), || rng.random_range(-1.0..1.0));
        let a = reconstruct(&z);
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = (0..3).map(|c| z[[i, c]] * z[[j, c]]).sum();
                assert!(close(a[[i, j]], 1.0 / (1.0 + (-dot).exp()), 1e-15));
                assert_eq!(a[[i, j]], a[[j, i]]);
            }
        }
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let reference = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let mut predicted = reference.clone();
        predicted.diag_mut().fill(1.0);
        let loss = reconstruction_loss(&predicted, &reference).unwrap();
        assert!(loss.abs() < 1e-5, "loss {loss}");
    }

    #[test]
    fn uniform_prediction_on_balanced_target_is_ln2() {
        // With the diagonal, 8 of 16 entries are ones.
        let reference = array![
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 1.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0]
        ];
        let mut target = reference.clone();
        target.diag_mut().fill(1.0);
        assert_eq!(positive_weight(&target), 1.0);
        let loss = reconstruction_loss(&Array2::from_elem((4, 4), 0.5), &reference).unwrap();
        assert!(close(loss, std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn reconstruction_loss_matches_hand_rolled_weighted_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut edges = Vec::new();
        for i in 0..6 {
            for j in (i + 1)..6 {
                if rng.random_bool(0.3) {
                    edges.push((i, j));
                }
            }
        }
        let adj = Adjacency::from_edges(6, &edges).unwrap();
        let z = Array2::from_shape_simple_fn((6, 2), || rng.random_range(-1.5..1.5));
        let predicted = reconstruct(&z);

        let dense = adj.to_dense();
        let mut ones = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if i == j || dense[[i, j]] == 1.0 {
                    ones += 1.0;
                }
            }
        }
        let weight = (36.0 - ones) / ones;
        let mut total = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                let t = if i == j { 1.0 } else { dense[[i, j]] };
                let p = predicted[[i, j]];
                total += -(weight * t * p.ln() + (1.0 - t) * (1.0 - p).ln());
            }
        }
        let expected = total / 36.0;
        assert!(close(reconstruction_loss(&predicted, &dense).unwrap(), expected, 1e-12));

        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let lv = reconstruction_loss_tape(&mut tape, zv, &adj).unwrap();
        assert!(close(tape.scalar(lv), expected, 1e-12));
    }

    #[test]
    fn single_center_assigns_everything() {
        let q = soft_assign(&array![[1.0, 2.0], [-3.0, 0.5]], &array![[0.0, 0.0]]).unwrap();
        assert!(q.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let q = soft_assign(&array![[0.0, 0.0]], &array![[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert!(close(q[[0, 0]], 0.5, 1e-15) && close(q[[0, 1]], 0.5, 1e-15));
    }

    #[test]
    fn point_on_center_against_distance_sqrt3() {
        // Kernels 1/(1+0) = 1 and 1/(1+3) = 0.25 normalize to (0.8, 0.2).
        let q = soft_assign(&array![[0.0, 0.0]], &array![[0.0, 0.0], [3f64.sqrt(), 0.0]]).unwrap();
        assert!(close(q[[0, 0]], 0.8, 1e-15));
        assert!(close(q[[0, 1]], 0.2, 1e-15));
    }

    #[test]
    fn tape_soft_assign_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Array2::from_shape_simple_fn((7, 3), || rng.random_range(-2.0..2.0));
        let mu = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-2.0..2.0));
        let plain = soft_assign(&z, &mu).unwrap();
        let mut tape = Tape::new();
        let (zv, mv) = (tape.constant(z), tape.constant(mu));
        let qv = soft_assign_tape(&mut tape, zv, mv).unwrap();
        let diff = (tape.value(qv) - &plain).mapv(f64::abs).fold(0.0_f64, |m, &v| m.max(v));
        assert!(diff < 1e-12);
    }

    #[test]
    fn uniform_rows_are_a_fixed_point() {
        let q = Array2::from_elem((3, 2), 0.5);
        let p = target_distribution(&q);
        assert!(p.iter().all(|&v| close(v, 0.5, 1e-15)));
    }

    #[test]
    fn one_hot_rows_are_a_fixed_point() {
        let q = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert_eq!(target_distribution(&q), q);
    }

    #[test]
    fn target_distribution_hand_computed_case() {
        // f = (1.5, 0.5); row 1: (0.81/1.5, 0.01/0.5) = (0.54, 0.02);
        // row 2: (0.36/1.5, 0.16/0.5) = (0.24, 0.32).
        let p = target_distribution(&array![[0.9, 0.1], [0.6, 0.4]]);
        assert!(close(p[[0, 0]], 0.54 / 0.56, 1e-12));
        assert!(close(p[[0, 1]], 0.02 / 0.56, 1e-12));
        assert!(close(p[[1, 0]], 0.24 / 0.56, 1e-12));
        assert!(close(p[[1, 1]], 0.32 / 0.56, 1e-12));
        assert!(close(p[[0, 0]], 0.964, 5e-4) && close(p[[1, 1]], 0.571, 5e-4));
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let q = array![[0.3, 0.7], [0.5, 0.5]];
        assert_eq!(clustering_loss(&q, &q).unwrap().value, 0.0);
    }

    #[test]
    fn kl_of_one_hot_against_uniform_is_ln2() {
        let kl = clustering_loss(&array![[1.0, 0.0]], &array![[0.5, 0.5]]).unwrap();
        assert!(close(kl.value, std::f64::consts::LN_2, 1e-15));
        assert_eq!(kl.clamped, 0);
    }

    #[test]
    fn kl_clamps_zero_q_entries() {
        let kl = clustering_loss(&array![[0.5, 0.5]], &array![[1.0, 0.0]]).unwrap();
        assert_eq!(kl.clamped, 1);
        assert!(kl.value.is_finite() && kl.value > 0.0);
    }

    #[test]
    fn kl_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Array2::from_shape_simple_fn((9, 2), || rng.random_range(-2.0..2.0));
        let mu = Array2::from_shape_simple_fn((3, 2), || rng.random_range(-2.0..2.0));
        let q = soft_assign(&z, &mu).unwrap();
        let p = target_distribution(&q);
        let mut expected = 0.0;
        for i in 0..9 {
            for j in 0..3 {
                expected += p[[i, j]] * (p[[i, j]] / q[[i, j]]).ln();
            }
        }
        assert!(close(clustering_loss(&p, &q).unwrap().value, expected, 1e-12));

        let mut tape = Tape::new();
        let qv = tape.constant(q);
        let (lv, clamped) = clustering_loss_tape(&mut tape, &p, qv).unwrap();
        assert_eq!(clamped, 0);
        assert!(close(tape.scalar(lv), expected, 1e-12));
    }

    #[test]
    fn total_loss_weights_clustering_term() {
        assert_eq!(total_loss(0.3, 0.05, 0.0), 0.3);
        assert!(close(total_loss(0.3, 0.05, 10.0), 0.8, 1e-15));
    }

    #[test]
    fn hard_labels_break_ties_low() {
        assert_eq!(hard_labels(&array![[0.5, 0.5], [0.2, 0.8]]), vec![0, 1]);
    }

    #[test]
    fn cross_entropy_matches_direct_sum() {
        let logits: Array2<f64> = array![[1.0, 2.0, 0.5], [0.0, -1.0, 3.0], [2.0, 2.0, 2.0]];
        let rows = [2, 0];
        let labels = [1, 2];
        let mut expected = 0.0;
        for (&r, &l) in rows.iter().zip(&labels) {
            let row = logits.row(r);
            let norm: f64 = row.iter().map(|v| v.exp()).sum();
            expected -= (row[l].exp() / norm).ln();
        }
        expected /= 2.0;
        let mut tape = Tape::new();
        let lv = tape.constant(logits);
        let loss = cross_entropy_tape(&mut tape, lv, &rows, &labels).unwrap();
        assert!(close(tape.scalar(loss), expected, 1e-12));
        assert!(cross_entropy_tape(&mut tape, lv, &rows, &[0, 3]).is_err());
        assert!(cross_entropy_tape(&mut tape, lv, &rows, &[0]).is_err());
    }
}
