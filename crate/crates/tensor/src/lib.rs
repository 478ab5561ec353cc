//! Dense `f64` tensors with a tape-based reverse-mode gradient graph and the
//! Adam optimizer with inverse-square-root warmup.
//!
//! Parameters live in a [`ParamStore`] outside the tape. A [`Graph`] borrows the
//! store, records every op on a linear tape and replays it backwards to produce
//! [`Gradients`] aligned with the store. Tapes are cheap and short-lived: one per
//! sequence is the intended granularity.

mod error;
mod graph;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use error::TensorError;
pub use graph::{Graph, Var};
pub use optim::{lr_schedule, Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, TensorError>;
