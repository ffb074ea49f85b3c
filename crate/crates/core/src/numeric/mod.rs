//! Dense tensors, a gradient tape over the handful of layers the models use,
//! and the Adam optimizer.

mod adam;
mod functional;
mod gemm;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use functional::{conv_over_time, one_max_pool, softmax};
pub use gradcheck::{check_gradients, GradCheck};
pub use tape::{Gradients, Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;
