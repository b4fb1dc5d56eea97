//! Dense tensors, deterministic initialisation, and the small set of
//! kernels (matmul, masked softmax, normalisation, activations, depthwise
//! convolution, LSTM cell) everything else is built from.

mod grad;
pub mod ops;
mod rng;
mod tensor;

pub use grad::{finite_diff_grad, rel_error, DEFAULT_STEP};
pub use ops::{
    depthwise_conv1d, depthwise_conv1d_segmented, glu, glu_backward, layer_norm, layer_norm_backward, linear,
    lstm_step, masked_softmax, matmul, sigmoid, swish, swish_backward, LstmWeights, LAYER_NORM_EPS,
};
pub use rng::Rng;
pub use tensor::{Real, Tensor};
