//! Graph attention layers and the encoders built from them.

mod encoder;
mod gat;

pub use encoder::{Encoder, EncoderShape};
pub use gat::{glorot_uniform, Activation, AttentionEdges, GatConfig, GatLayer, ATTENTION_SLOPE};
