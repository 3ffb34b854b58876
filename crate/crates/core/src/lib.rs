//! Simulation library for RIS-aided multi-user downlink with
//! environment-aware codebooks and online training.

pub mod channel;
pub mod codebook;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod precoding;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
