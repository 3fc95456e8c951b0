//! Layer kernels: forward and backward passes for every layer kind the
//! supported topologies need.

pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod pool;
pub mod reference;

pub use conv::{conv2d_backward, conv2d_forward, ConvKernel};
pub use elementwise::{
    add_forward, bn_affine_backward, bn_affine_forward, relu_backward, relu_forward,
    softmax_backward, softmax_forward, BnAffine,
};
pub use linear::{fc_backward, fc_forward, FcParams};
pub use pool::{gap_backward, gap_forward, maxpool_backward, maxpool_forward, PoolWindow};
