//! Three-party secure computation over replicated real-valued sharings.

pub mod bench;
pub mod error;
pub mod mlp;
pub mod protocols;
pub mod runtime;
pub mod secanalysis;
pub mod sharing;
pub mod tensor;

pub use error::{Error, Result};
