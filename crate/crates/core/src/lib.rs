//! Speech synthesis and recognition from mostly unpaired data on a shared
//! Transformer backbone: denoising auto-encoding, on-the-fly dual
//! transformation and bidirectional sequence modeling.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod modality;
pub mod store;
pub mod text;
pub mod training;
pub mod transformer;

pub use error::CoreError;

pub type Result<T> = std::result::Result<T, CoreError>;

/// RNG type used where an optional RNG is `None`.
pub(crate) type NoRng = rand_chacha::ChaCha8Rng;
