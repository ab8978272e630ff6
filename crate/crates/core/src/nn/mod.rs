//! A small CNN engine with manual backpropagation.

pub mod checkpoint;
pub mod layers;
pub(crate) mod linalg;
pub mod loss;
pub mod model;
pub mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use layers::{
    BatchNorm, Conv2d, Flatten, GlobalAvgPool, Layer, Linear, MaxPool, Mode, Param, Relu,
    ResidualBlock,
};
pub use loss::{argmax_rows, softmax_cross_entropy};
pub use model::{build_model, Arch, ModelGraph, RESNET8_CHANNELS};
pub use tensor::Tensor;
