//! Dense tensors, a reverse-mode tape, stable softmax kernels and the
//! optimiser used for training.

pub mod gradcheck;
pub mod optim;
pub mod rng;
mod scalar;
pub mod softmax;
pub mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, MAX_WIDENINGS};
pub use optim::{clip_grad_norm, cosine_lr, Adam, AdamConfig};
pub use rng::{Rng, RngState};
pub use scalar::{Precision, Scalar};
pub use softmax::{logaddexp, logsumexp_masked, softmax_masked, softmax_row_into};
pub use tape::{Gradients, Tape, Var, MASKED};
pub use tensor::{dot, gemm, gemm_nt, gemm_tn, parallel_enabled, set_parallel, Tensor};

/// Variance floor inside every layer normalisation.
pub const LAYER_NORM_EPS: f64 = 1e-5;
