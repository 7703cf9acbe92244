//! Dense `f64` tensors, a reverse-mode tape, and SGD with momentum.

mod optim;
mod tape;
mod tensor;

pub use optim::{Param, Sgd};
pub use tape::{log_add_exp, Tape, Var, NORM_FLOOR};
pub use tensor::Tensor;
