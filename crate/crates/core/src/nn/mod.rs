//! A small CPU tensor and layer toolkit: NCHW tensors, 3×3/1×1 convolution
//! (direct 3×3 kernels, SGEMM for 1×1), fused batch-norm + ReLU, dropout, max pooling,
//! bilinear upsampling and first-order optimizers.

mod conv3;
mod layers;
mod optim;
mod reduce;
mod tensor;

pub use layers::{
    upsample2_backward, upsample2_forward, BnRelu, Conv2d, Dropout, MaxPool2, Param, BN_EPS,
    BN_MOMENTUM,
};
pub use optim::{clip_grad_norm, grad_norm, Optimizer, OptimizerConfig};
pub use tensor::Tensor;
