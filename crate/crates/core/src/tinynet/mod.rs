//! Forward-pass engine for a tiny three-level U-Net.
//!
//! The encoder halves the resolution with stride-2 3x3 convolutions, a
//! stride-1 convolution refines the bottom level, and each decoder stage is
//! a 3x3 convolution followed by a 2x pixel shuffle. Encoder features are
//! concatenated onto the decoder input at matching resolution. All
//! activations are leaky ReLU except the last convolution, whose output is
//! clamped to `[0, 1]` when converted back to an [`Image`](crate::Image).

mod ops;
mod tensor;
mod unet;
mod weights;

pub use ops::{concat_channels, conv_layer, leaky_relu, pixel_shuffle, space_to_depth};
pub use tensor::Tensor;
pub use unet::{
    layer_plan, unet_flops, unet_forward, unet_forward_tensor, FinalOp, LayerDef, NetSpec,
};
pub use weights::{
    load_weights, random_weights, save_weights, WeightStore, WeightTensor, WEIGHT_MAGIC,
};
