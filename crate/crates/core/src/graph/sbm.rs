use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::AttributedGraph;
use crate::error::{Error, Result};

/// Stochastic block model with Gaussian node attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmParams {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Norm of each block's feature mean.
    pub feature_shift: f64,
    pub seed: u64,
}

impl SbmParams {
    pub fn new(blocks: Vec<usize>, p_in: f64, p_out: f64) -> Self {
        Self {
            blocks,
            p_in,
            p_out,
            feature_dim: 32,
            feature_shift: 2.0,
            seed: 0,
        }
    }

    pub fn feature_dim(mut self, feature_dim: usize) -> Self {
        self.feature_dim = feature_dim;
        self
    }

    pub fn feature_shift(mut self, feature_shift: f64) -> Self {
        self.feature_shift = feature_shift;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::contract(format!("{name} = {p} is not a probability")))
    }
}

/// Samples an undirected SBM graph. Block `b`'s features are drawn from
/// `N(shift * u_b, I)` where `u_b` is a random unit direction.
pub fn generate_sbm(params: &SbmParams) -> Result<AttributedGraph> {
    check_probability("p_in", params.p_in)?;
    check_probability("p_out", params.p_out)?;
    if params.blocks.is_empty() || params.blocks.contains(&0) {
        return Err(Error::contract("block sizes must be positive"));
    }
    if params.feature_dim == 0 {
        return Err(Error::contract("feature_dim must be positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let labels: Vec<usize> = params
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = labels.len();
    let d = params.feature_dim;

    let mut means = Array2::<f64>::zeros((params.blocks.len(), d));
    for mut row in means.rows_mut() {
        loop {
            row.mapv_inplace(|_| rng.sample(StandardNormal));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row.mapv_inplace(|v| v / norm * params.feature_shift);
                break;
            }
        }
    }

    let mut features = Array2::<f64>::zeros((n, d));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let mean = means.row(labels[i]);
        for (x, &mu) in row.iter_mut().zip(mean) {
            let noise: f64 = rng.sample(StandardNormal);
            *x = mu + noise;
        }
    }

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }

    AttributedGraph::new(features, &edges, Some(labels))
}

/// Adds `ceil(fraction * |E|)` uniformly chosen absent edges, capped at
/// the number of absent pairs. Existing edges are kept.
pub fn inject_noise_edges(graph: &AttributedGraph, fraction: f64, seed: u64) -> Result<AttributedGraph> {
    if !(fraction >= 0.0 && fraction.is_finite()) {
        return Err(Error::contract(format!("noise fraction {fraction} must be finite and >= 0")));
    }
    let existing = graph.num_edges();
    let requested = (fraction * existing as f64).ceil() as usize;
    if requested == 0 {
        return Ok(graph.clone());
    }
    let n = graph.num_nodes();
    let adj = graph.adjacency();
    let available = n * (n - 1) / 2 - existing;
    if available == 0 {
        return Err(Error::GraphComplete {
            requested,
            available,
        });
    }
    let count = requested.min(available);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut added = Vec::with_capacity(count);
    if count * 4 >= available {
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !adj.contains(u, v))
            .collect();
        added.extend(index::sample(&mut rng, candidates.len(), count).into_iter().map(|i| candidates[i]));
    } else {
        let mut chosen = std::collections::HashSet::with_capacity(count);
        while added.len() < count {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            let pair = (u.min(v), u.max(v));
            if u != v && !adj.contains(u, v) && chosen.insert(pair) {
                added.push(pair);
            }
        }
    }

    let mut edges = graph.edges();
    edges.extend(added);
    graph.with_edges(&edges)
}
