use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::tensor::{Binding, ParamId, ParamStore, Segments, Tape, Var};

/// Negative slope of the LeakyReLU applied to attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Message-passing pattern for attention: node `i` attends to every
/// `j ∈ N(i) ∪ {i}`. Self-loops live only here, never in the adjacency.
#[derive(Debug, Clone)]
pub struct AttentionEdges {
    num_nodes: usize,
    targets: Arc<[usize]>,
    sources: Arc<[usize]>,
    segments: Segments,
}

impl AttentionEdges {
    pub fn from_adjacency(adj: &Adjacency) -> Self {
        let n = adj.num_nodes();
        let mut targets = Vec::with_capacity(2 * adj.num_edges() + n);
        let mut sources = Vec::with_capacity(targets.capacity());
        for i in 0..n {
            let neighbors = adj.neighbors(i);
            let split = neighbors.partition_point(|&j| j < i);
            for &j in neighbors[..split].iter().chain([i].iter()).chain(&neighbors[split..]) {
                targets.push(i);
                sources.push(j);
            }
        }
        let segments = Segments::new(targets.clone(), n).expect("targets are node indices");
        Self {
            num_nodes: n,
            targets: targets.into(),
            sources: sources.into(),
            segments,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of (target, source) pairs, self pairs included.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn sources(&self) -> &[usize] {
        &self.sources
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Elu,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Elu => tape.elu(x),
        }
    }
}

/// Glorot-uniform matrix: entries in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, Copy)]
struct Head {
    weight: ParamId,
    attention: ParamId,
}

/// Multi-head graph attention layer.
#[derive(Debug, Clone)]
pub struct GatLayer {
    heads: Vec<Head>,
    in_dim: usize,
    head_dim: usize,
    activation: Activation,
    concat: bool,
}

/// Layer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub activation: Activation,
    /// Concatenate head outputs; otherwise average them.
    pub concat: bool,
}

impl GatLayer {
    /// Registers the layer's parameters as `{prefix}.h{m}.W` (in×head_dim)
    /// and `{prefix}.h{m}.a` (2·head_dim × 1).
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        in_dim: usize,
        config: GatConfig,
    ) -> Self {
        assert!(config.heads > 0 && config.head_dim > 0, "empty attention layer");
        let heads = (0..config.heads)
            .map(|m| Head {
                weight: store.add(
                    format!("{prefix}.h{m}.W"),
                    glorot_uniform(rng, in_dim, config.head_dim),
                ),
                attention: store.add(
                    format!("{prefix}.h{m}.a"),
                    glorot_uniform(rng, 2 * config.head_dim, 1),
                ),
            })
            .collect();
        Self {
            heads,
            in_dim,
            head_dim: config.head_dim,
            activation: config.activation,
            concat: config.concat,
        }
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        if self.concat {
            self.head_dim * self.heads.len()
        } else {
            self.head_dim
        }
    }

    /// Parameter ids `(W, a)` of head `m`.
    pub fn head_params(&self, m: usize) -> (ParamId, ParamId) {
        (self.heads[m].weight, self.heads[m].attention)
    }

    /// Attention coefficients of every head, one column per head, in
    /// [`AttentionEdges`] order.
    pub fn attention(&self, tape: &mut Tape, params: &Binding, h: Var, edges: &AttentionEdges) -> Result<Vec<Var>> {
        self.check_input(tape, h, edges)?;
        let mut out = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (_, alpha) = self.head_attention(tape, params, h, edges, head)?;
            out.push(alpha);
        }
        Ok(out)
    }

    fn check_input(&self, tape: &Tape, h: Var, edges: &AttentionEdges) -> Result<()> {
        let shape = tape.shape(h);
        if shape.1 != self.in_dim || shape.0 != edges.num_nodes() {
            return Err(Error::Dimension {
                op: "gat_forward",
                left: shape,
                right: (edges.num_nodes(), self.in_dim),
            });
        }
        Ok(())
    }

    fn head_attention(
        &self,
        tape: &mut Tape,
        params: &Binding,
        h: Var,
        edges: &AttentionEdges,
        head: &Head,
    ) -> Result<(Var, Var)> {
        let projected = tape.matmul(h, params[head.weight])?;
        let a = params[head.attention];
        let a_target = tape.gather_rows(a, (0..self.head_dim).collect::<Vec<_>>())?;
        let a_source = tape.gather_rows(a, (self.head_dim..2 * self.head_dim).collect::<Vec<_>>())?;
        let target_score = tape.matmul(projected, a_target)?;
        let source_score = tape.matmul(projected, a_source)?;
        let per_edge_target = tape.gather_rows(target_score, edges.targets.clone())?;
        let per_edge_source = tape.gather_rows(source_score, edges.sources.clone())?;
        let logits = tape.add(per_edge_target, per_edge_source)?;
        let logits = tape.leaky_relu(logits, ATTENTION_SLOPE);
        let alpha = tape.softmax_over_segments(logits, &edges.segments)?;
        Ok((projected, alpha))
    }

    /// `h'_i = act(Σ_{j ∈ N(i) ∪ {i}} α_ij W h_j)` per head, heads
    /// concatenated or averaged (activation after the average).
    pub fn forward(&self, tape: &mut Tape, params: &Binding, h: Var, edges: &AttentionEdges) -> Result<Var> {
        self.check_input(tape, h, edges)?;
        let mut outputs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (projected, alpha) = self.head_attention(tape, params, h, edges, head)?;
            let messages = tape.gather_rows(projected, edges.sources.clone())?;
            let weighted = tape.mul(messages, alpha)?;
            let aggregated = tape.segment_sum(weighted, &edges.segments)?;
            outputs.push(if self.concat {
                self.activation.apply(tape, aggregated)
            } else {
                aggregated
            });
        }
        if self.concat {
            if outputs.len() == 1 {
                return Ok(outputs[0]);
            }
            tape.concat_cols(&outputs)
        } else {
            let mut total = outputs[0];
            for &o in &outputs[1..] {
                total = tape.add(total, o)?;
            }
            let mean = tape.scale(total, 1.0 / outputs.len() as f64);
            Ok(self.activation.apply(tape, mean))
        }
    }
}
