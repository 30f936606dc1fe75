//! Tensor operations, reverse-mode gradients and the AdaDelta update.

mod adadelta;
pub mod ops;
mod tape;

pub use adadelta::{AdaDeltaParams, AdaDeltaState};
pub use ops::{
    avg_pool_halves, channel_product, conv2d_valid, mse, replicate_halves, tanh_map,
    transpose_conv2d, zero_sum_penalty,
};
pub use tape::{Gradients, Tape, Var};
