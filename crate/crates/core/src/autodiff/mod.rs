//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records one forward pass. Models keep their weights in a
//! [`ParamStore`], bind them onto a fresh tape per step, and feed the
//! resulting gradients to [`Adam`].

mod gemm;
pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{Adam, AdamConfig};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
