//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A deliberately small engine: enough ops for convolutional encoders and
//! decoders, bilinear warping, patch resampling, and the loss algebra built
//! on top of them. Everything runs in double precision so finite-difference
//! gradient checks are meaningful.

pub mod conv;
pub mod gemm;
pub mod io;
pub mod nn;
pub mod optim;
pub mod sample;
pub mod tape;
pub mod tensor;

pub use conv::{avg_pool2d, conv2d, mean_spatial, upsample_nearest2, ConvSpec};
pub use nn::{apply_buffer_writes, Conv2d, Linear, ParamEntry, ParamId, ParamKind, ParamStore, Session};
pub use optim::{adam_step, AdamConfig};
pub use sample::{roi_resample, warp_bilinear};
pub use tape::{
    abs, acos_safe, add, add_scalar, clamp, concat, detach, div, exp, leaky_relu, ln, matmul,
    mean, mul, neg, relu, reshape, scale, sigmoid, slice, sqrt, sub, sum, sum_axis, transpose2,
    Gradients, Tape, Var,
};
pub use tensor::Tensor;
