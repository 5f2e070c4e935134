//! Minimal layer library with hand-written backward passes.
//!
//! Layers cache whatever their backward pass needs when run with `train = true`
//! and accumulate parameter gradients into [`Param::grad`]. Composite modules
//! expose their parameters through [`Module::visit`] under stable dotted names,
//! which the optimizer and the checkpoint format both rely on.

mod activation;
mod conv;
mod linear;
mod loss;
mod norm;
mod param;
mod pool;

pub use activation::{Relu, Tanh};
pub use conv::{col2im, conv_out_side, im2col, Conv2d, ConvTranspose2d};
pub use linear::Linear;
pub use loss::{argmax, log_softmax_rows, softmax_cross_entropy, CrossEntropy};
pub use norm::BatchNorm2d;
pub use param::{join_name, Module, Param};
pub use pool::{adaptive_avg_pool, adaptive_avg_pool_backward, pool_bins};
