//! Forward/backward layer kernels. The tape in [`crate::tape`] records these
//! and drives the reverse pass.

pub mod activation;
pub mod affine;
pub mod batchnorm;
pub mod conv;
pub mod loss;

pub use activation::{activation_backward, activation_forward, Activation};
pub use affine::{affine_backward, affine_forward};
pub use batchnorm::{
    batchnorm2d_eval_backward, batchnorm2d_eval_forward, batchnorm2d_train_backward,
    batchnorm2d_train_forward, update_running_stats, BatchStats,
};
pub use conv::{
    conv2d_backward_bias, conv2d_backward_input, conv2d_backward_kernel, conv2d_forward,
    conv2d_transpose_backward_bias, conv2d_transpose_backward_input,
    conv2d_transpose_backward_kernel, conv2d_transpose_forward, conv_out_extent,
    conv_transpose_out_extent,
};
pub use loss::{
    bce_with_logits_backward, bce_with_logits_forward, softmax_cross_entropy_backward,
    softmax_cross_entropy_forward, softmax_rows,
};
