//! Dual graph embedding network (DGEN) for attributed graph clustering.
//!
//! A global graph-attention encoder embeds every node, neighbor-cluster
//! pooling keeps the nodes whose embedding (and whose SNN-nearest
//! neighbor's embedding) sits closest to a K-means center, and a local
//! encoder re-embeds the pooled subgraph under a reconstruction plus
//! self-training clustering objective. Cluster labels of the kept nodes
//! then supervise a GAT classifier that labels the whole graph.

pub mod error;
pub mod gnn;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod pool;
pub mod tensor;

pub use error::{Error, Result};
