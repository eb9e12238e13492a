//! Numeric core of the BMFNet workbench.
//!
//! Everything here needs only `alloc`: the tensor/autograd substrate
//! ([`numerics`]), synthetic recordings and preprocessing ([`signals`]), the
//! transformer blocks ([`attention`]), the teacher/student models
//! ([`bmfnet`]) and the distillation losses and trainer ([`distill`]).
//! File formats, orchestration and the command line live in the `bmfnet`
//! companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod attention;
pub mod bmfnet;
pub mod distill;
pub mod numerics;
pub mod signals;

pub use error::{Error, Result};
pub use numerics::{ParamStore, Tape, Tensor, Var};
