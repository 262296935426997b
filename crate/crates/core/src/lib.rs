//! Grant-free activity detection for cell-free massive MIMO.
//!
//! The crate covers the whole simulation chain: channel and network
//! generation, access-slot synthesis, the lightweight perceptron detector and
//! its training, the decentralized and centralized detection strategies,
//! sparse-recovery baselines, and the evaluation harness.

pub mod baseline;
pub mod channel;
pub mod config;
pub mod detect;
pub mod error;
pub mod eval;
pub mod scenario;
pub mod seed;
pub mod slp;

pub use error::{Error, ErrorCategory, Result};
