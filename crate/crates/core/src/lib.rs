//! Gossip-based distributed power method simulator for decentralized
//! EVD/SVD over sensor networks.

pub mod consensus;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod power;
pub mod signal;
pub mod topology;
pub mod weights;

pub use error::{Error, Result};
