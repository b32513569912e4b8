//! Dense tensors, activation primitives with hand-written derivatives,
//! Glorot initialization, the Adam optimizer and a central-difference
//! gradient checker.
//!
//! Every model in this crate stores its learnable state as [`Param`]s and
//! computes gradients analytically; [`finite_diff_check`] is the oracle used
//! to verify them.

mod adam;
mod gradcheck;
mod init;
mod ops;
mod param;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{finite_diff_check, GradCheck};
pub use init::{glorot_init, glorot_limit, seeded, stream_rng, Rng};
pub use ops::{
    add_outer, cross_entropy, cross_entropy_logit_grad, matvec, matvec_transpose_acc, relu,
    relu_scalar, sigmoid, sigmoid_scalar, softmax_backward, softmax_stable, PROB_CLAMP,
};
pub use param::{Param, Parameterized};
pub use tensor::Tensor;
