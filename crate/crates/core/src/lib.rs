//! Coupled security, schedulability and stability envelope for authenticated
//! engine-control loops.

pub mod bus;
pub mod channel;
pub mod crypto;
pub mod engine;
pub mod envelope;
pub mod estimator;
pub mod rng;
pub mod sim;
pub mod stability;
pub mod stats;
pub mod validate;
pub mod verdict;
