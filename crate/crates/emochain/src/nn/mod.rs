//! Small differentiable layer library over `(channels, time, width)`
//! tensors: convolution, gated linear units, instance normalization, pixel
//! shuffle and the blocks built from them, an L1 loss, Adam, and a finite
//! difference gradient checker.

mod adam;
mod gradcheck;
mod layer;
mod network;
mod ops;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_LEARNING_RATE};
pub use gradcheck::{
    central_difference, check_indices, compare_gradients, gradient_check, random_layer, relative_error,
    run_layer_suite, GradCheckReport, GradIndex, SuiteEntry, DEFAULT_GRAD_TOL, GRAD_FLOOR, MAX_CHECKED,
    SUITE_KINDS,
};
pub use layer::{LayerCache, LayerSpec};
pub use network::{Network, NetworkCache, NetworkSpec};
pub use ops::{
    conv2d, conv2d_backward, glu, glu_backward, instance_norm, instance_norm_backward, l1_loss, pixel_shuffle,
    pixel_unshuffle, Conv2d, NormCache, DEFAULT_NORM_EPS,
};
pub use tensor::Tensor;
