//! Dense tensors, reverse-mode differentiation and the small linear-algebra
//! kernels the rest of the crate builds on.

mod gradcheck;
pub mod io;
pub(crate) mod kernels;
mod linalg;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many};
pub use linalg::{gram, power_iteration, Eigenpair, DEGENERACY_GAP, RESIDUAL_BOUND};
pub use tape::{Pointwise, Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;
