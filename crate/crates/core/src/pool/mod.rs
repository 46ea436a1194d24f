//! Node selection: neighbor-cluster pooling, the projection-based top-k
//! baseline, and the K-means engine both rely on.

pub mod kmeans;
pub mod ncpool;
pub mod topk;

use std::fmt;
use std::str::FromStr;

pub use kmeans::{assign, kmeans, KmeansModel, RESTARTS};
pub use ncpool::{ncpool, node_scores, pooled_size, PooledGraph};
pub use topk::{projection_scores, topk_gate_on_tape, topk_pool_baseline};

/// Which pooling operator feeds the local encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    #[default]
    NcPool,
    TopK,
    /// Every node, unit gates.
    None,
}

impl FromStr for PoolMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ncpool" => Ok(Self::NcPool),
            "topk" => Ok(Self::TopK),
            "none" => Ok(Self::None),
            other => Err(crate::Error::contract(format!("unknown pool mode '{other}' (expected ncpool, topk or none)"))),
        }
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NcPool => "ncpool",
            Self::TopK => "topk",
            Self::None => "none",
        })
    }
}
