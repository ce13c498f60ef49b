//! Forward and analytic backward kernels composed by every higher layer.
//!
//! All kernels are pure functions of their operands with a fixed reduction
//! order, so repeated calls on identical inputs are bitwise identical.

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod macs;
pub mod norm;
pub mod pool;

pub use activation::{
    relu, relu6, relu6_backward, relu_backward, sigmoid, sigmoid_backward, spatial_softmax,
    spatial_softmax_backward, Activation,
};
pub use conv::{
    conv2d, conv2d_backward, conv2d_standard, depthwise_conv, pointwise_conv, ConvGrads, ConvKind,
    ConvSpec,
};
pub use elementwise::{broadcast_mul_add, broadcast_mul_add_backward, channel_concat, split_channels};
pub use linear::{fully_connected, fully_connected_backward, LinearGrads, LinearSpec};
pub use macs::{count_macs, MacKind, MacTally};
pub use norm::{batch_norm_backward, batch_norm_forward, BnCache, BnGrads, RunningStats};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, maxpool_3x3_p1, maxpool_3x3_p1_backward,
    MaxPoolOutput,
};

/// Whether batch normalization uses batch statistics (and updates its running
/// statistics) or the frozen running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}
