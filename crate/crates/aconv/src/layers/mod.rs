//! Layer forward/backward passes: the adaptive envelope convolution, the
//! ordinary convolution baseline, and the auxiliary layers the experiment
//! networks need (dense, ReLU, max-pool, batch norm, dropout, flatten,
//! softmax cross-entropy).

mod basic;
mod conv;

pub use basic::{
    softmax_crossentropy, BatchNormLayer, DenseLayer, DropoutLayer, FlattenLayer, MaxPool2x2Layer,
    ReluLayer,
};
pub use conv::{
    aconv_backward, aconv_forward, conv_backward, conv_forward, AconvCache, AdaptiveKernelParams,
    ConvCache, ConvGradients, LayerGradients,
};
