//! WiFi RSSI based indoor distance estimation.
//!
//! The crate covers the whole pipeline: a log-distance channel with
//! correlated shadowing and Rician multipath, a five-node star acquisition
//! network with simulated camera ground truth, preprocessing into
//! `[batch × window × nodes]` tensors over equal-width distance bins, three
//! hand-differentiated classifiers (FCN, CNN, stacked LSTM) trained with Adam,
//! and the bin-based error-bound metrics together with a path-loss inversion
//! baseline.

pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod models;
pub mod netsim;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};

/// Interval between node reports and camera frames, in milliseconds.
pub const TICK_MS: u64 = 50;

/// Number of reporting nodes: four fixed corner nodes plus the target.
pub const NUM_NODES: usize = 5;

/// Node id of the mobile target node.
pub const TARGET_NODE: u8 = 4;
