//! Reverse-mode differentiation over a closed set of tensor primitives.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, piecewise_diff_check, FdReport, Probe};
pub(crate) use tape::{diffusion_stack_forward, filter_weights_forward, stack_combine_forward};
pub use tape::{Adjoints, Gradients, NodeId, Tape};
pub use tensor::Tensor;
