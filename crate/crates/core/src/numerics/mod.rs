//! Dense tensors, the differentiation tape and the optimizer.

mod adam;
mod dropout;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dropout::Dropout;
pub use params::{read_checkpoint, write_checkpoint, Init, ParamStore, Session};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
