//! Dense tensors, the network primitives with reverse-mode gradients, SGD,
//! finite-difference checking and the checkpoint codec.

pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use ops::{conv2d, dense, global_avg_pool, maxpool2, pixel_softmax, relu, upsample_nearest2};
pub use params::{sgd_step, xavier_uniform, BoundParams, Param, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
