//! Uplink XL-MIMO simulation engine.

pub mod assignment;
pub mod channel;
pub mod detection;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod scenario;
pub mod selection;
