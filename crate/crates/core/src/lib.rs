//! Multi-cell massive MIMO downlink with pilot contamination: network
//! geometry, channel statistics, achievable-rate bounds, rate regions for
//! several decoding strategies and max-min symmetric-rate optimization.

pub mod bounds;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod lp;
pub mod regions;
pub mod symrate;

pub use error::{Error, Result};
