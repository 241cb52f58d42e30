//! Numeric kernels (forward and backward) shared by the autodiff layer
//! and by value-only callers like the tracker's aggregation step.

pub mod basic;
pub mod conv;
pub mod flops;
pub mod gemm;
pub mod pool;

pub use basic::{
    concat, leaky_relu, matmul, pixel_shuffle, softmax, sum_all, transpose2d,
};
pub use conv::{conv2d, conv_transpose2d};
pub use pool::{avg_pool2d, bilinear_resize};
