//! Numeric substrate: tensors, the differentiation tape, parameters and Adam.

mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, HEADER as CHECKPOINT_HEADER};
pub use params::{AdamConfig, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_in_place;
