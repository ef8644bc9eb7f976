//! Forward and backward kernels on plain tensors.
//!
//! Each kernel is a pure function; [`crate::graph::Graph`] records calls to
//! them and replays the matching backward kernels.

pub mod activation;
pub mod conv;
pub mod linalg;
pub mod norm;
pub mod pool;
pub mod similarity;

pub use activation::{leaky_relu, softmax_rows};
pub use conv::conv2d;
pub use linalg::{matmul, transpose};
pub use norm::{batch_norm, layer_normalize, BatchNormMode, RunningStats, BN_EPS, BN_MOMENTUM, LN_EPS};
pub use pool::{adaptive_max_pool_width, max_pool_over_channels};
pub use similarity::cosine_similarity;
