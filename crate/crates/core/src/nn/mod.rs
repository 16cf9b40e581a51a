//! A small trainable 3-D encoder-decoder network.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use gradcheck::{compare_gradients, gradient_check, GradCheckOptions, GradCheckReport};
pub use layers::{
    concat_backward, concat_forward, conv3d_backward, conv3d_forward, dropout_forward,
    maxpool3d_backward, maxpool3d_forward, relu_backward, relu_forward, upsample3d_backward,
    upsample3d_forward, Conv3d, ConvGrads, Mode, UpsampleMode,
};
pub use loss::{
    cross_entropy, cross_entropy_index, mean_cross_entropy, softmax, softmax_in_place,
    softmax_voxels, LOG_EPS,
};
pub use network::{
    ForwardTrace, Gradients, Layer, Network, NetworkConfig, Op, ParamKind, ParamView,
};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{Shape, Tensor4};
