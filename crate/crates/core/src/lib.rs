//! Two agents learn digital modulation schemes over an AWGN channel under
//! four protocols with decreasing information sharing: gradient passing,
//! loss passing, echo with shared preamble, and echo with private preamble.
//!
//! The crate provides the channel and classic-scheme baselines, the neural
//! and polynomial learning agents with hand-derived gradients, the four
//! protocol step functions and training loop, round-trip BER evaluation with
//! the dB-off-optimal metric, and a reproducible multi-seed experiment
//! runner.

pub mod adam;
pub mod agents;
pub mod channel;
pub mod checkpoint;
pub mod classic;
pub mod error;
pub mod evaluation;
pub mod grad_check;
pub mod mlp;
pub mod poly;
pub mod presets;
pub mod protocols;
pub mod runner;
pub mod selftest;
pub mod words;

pub use error::{Error, Result};
