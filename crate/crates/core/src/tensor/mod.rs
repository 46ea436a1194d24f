//! Dense double-precision reverse-mode differentiation.

mod adam;
mod param;
mod tape;

pub use adam::Adam;
pub use param::{read_checkpoint, Binding, DiffTensor, ParamId, ParamStore};
pub use tape::{Gradients, OpKind, Segments, Tape, Var};
pub(crate) use tape::take_rows;
