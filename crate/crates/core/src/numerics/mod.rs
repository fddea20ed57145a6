//! Dense tensors, a gradient tape, parameters and a finite-difference checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::check_gradients;
pub use params::{Init, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{layer_norm, log_softmax, log_sum_exp, softmax, Scalar, Tensor, LAYER_NORM_EPS};
