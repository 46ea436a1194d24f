use rand::Rng;

use super::gat::{Activation, AttentionEdges, GatConfig, GatLayer};
use crate::error::{Error, Result};
use crate::tensor::{Binding, ParamStore, Tape, Var};

/// Widths of a two-layer attention stack: a concatenating ELU hidden
/// layer followed by a head-averaging output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderShape {
    pub hidden_heads: usize,
    pub hidden_head_dim: usize,
    pub out_heads: usize,
    pub out_dim: usize,
}

impl EncoderShape {
    /// 4 heads × 64 = 256 hidden units, then a 16-wide embedding.
    pub const EMBEDDING: EncoderShape = EncoderShape {
        hidden_heads: 4,
        hidden_head_dim: 64,
        out_heads: 4,
        out_dim: 16,
    };

    pub fn with_out_dim(self, out_dim: usize) -> Self {
        Self { out_dim, ..self }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_heads * self.hidden_head_dim
    }
}

/// Stack of attention layers applied in order.
#[derive(Debug, Clone)]
pub struct Encoder {
    layers: Vec<GatLayer>,
}

impl Encoder {
    pub fn from_layers(layers: Vec<GatLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("encoder needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension {
                    op: "encoder chain",
                    left: (0, pair[0].out_dim()),
                    right: (pair[1].in_dim(), 0),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Two-layer encoder with parameters named `{prefix}.l{i}.h{m}.{W,a}`.
    /// The output layer has no nonlinearity.
    pub fn two_layer(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        in_dim: usize,
        shape: EncoderShape,
    ) -> Self {
        let hidden = GatLayer::new(
            store,
            rng,
            &format!("{prefix}.l0"),
            in_dim,
            GatConfig {
                heads: shape.hidden_heads,
                head_dim: shape.hidden_head_dim,
                activation: Activation::Elu,
                concat: true,
            },
        );
        let output = GatLayer::new(
            store,
            rng,
            &format!("{prefix}.l1"),
            hidden.out_dim(),
            GatConfig {
                heads: shape.out_heads,
                head_dim: shape.out_dim,
                activation: Activation::Identity,
                concat: false,
            },
        );
        Self {
            layers: vec![hidden, output],
        }
    }

    pub fn layers(&self) -> &[GatLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Embeds every node of the graph described by `edges`.
    pub fn encode(&self, tape: &mut Tape, params: &Binding, features: Var, edges: &AttentionEdges) -> Result<Var> {
        let mut h = features;
        for layer in &self.layers {
            h = layer.forward(tape, params, h, edges)?;
        }
        Ok(h)
    }
}
