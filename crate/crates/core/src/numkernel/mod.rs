//! Dense numeric kernel: f32 tensors, a reverse-mode tape over a fixed op
//! set, AdamW, and a finite-difference oracle.

mod adamw;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adamw::{AdamWConfig, AdamWState};
pub use tape::{sigmoid, softplus, Binary, Gradients, ParamGrads, ParamId, Tape, Unary, Var};
pub use tensor::Tensor;
