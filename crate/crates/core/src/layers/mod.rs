//! Layer kernels: serial references used as oracles, and distributed
//! implementations that operate on one rank's block of a [`DistTensor`].
//!
//! [`DistTensor`]: crate::tensor::DistTensor

mod accounting;
mod batchnorm;
mod conv;
mod dense;
pub mod kernels;
mod loss;
mod op;
mod pointwise;
mod pool;
mod redistribute;
pub mod reference;

pub use accounting::{flop_count, Phase};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, dist_batchnorm_backward, dist_batchnorm_forward, serial_reduce, BnCache,
    BnMode, BnState, BN_EPS, BN_MOMENTUM,
};
pub use conv::{
    conv3d_bwd_filter_local, conv3d_from_block, conv_output_meta, deconv3d_bwd_data_from_block,
    deconv3d_bwd_filter_local, deconv3d_from_block, deconv_output_meta, dist_conv3d, dist_conv3d_bwd_data,
    dist_conv3d_bwd_filter, dist_deconv3d, dist_deconv3d_bwd_data, halo_block,
};
pub use dense::{fc_backward, fc_forward};
pub use loss::{cross_entropy, dist_cross_entropy, dist_mse, mse, CrossEntropy, Mse};
pub use op::{ConvParams, LayerOp, PoolKind, POOL_WINDOW};
pub use pointwise::{
    concat_channels, dropout, dropout_mask, leaky_relu, leaky_relu_backward, split_channels, DropoutKey,
};
pub use pool::{dist_pool3d, dist_pool3d_backward, pool_output_meta, PoolCache};
pub use redistribute::redistribute;
