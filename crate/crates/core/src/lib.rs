//! Encrypted inference for dense neural-network classifiers.
//!
//! Model parameters are encrypted under a leveled BFV-style scheme and the
//! forward pass runs on ciphertexts at an untrusted edge node; only the
//! backend holding the secret key can read results.

pub mod bfv;
pub mod agents;
pub mod bench;
pub mod codec;
pub mod einfer;
pub mod encode;
pub mod error;
pub mod modring;
pub mod nn;
pub mod protect;
pub mod storage;

pub use error::{Error, Result};
