//! Dense tensors, reverse-mode differentiation, optimizer and parameter files.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
mod kernels;
mod ops;
mod optim;
mod param;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport, GradProbe};
pub use ops::conv_out_len;
pub use optim::{AdamConfig, AdamState};
pub use param::{Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
