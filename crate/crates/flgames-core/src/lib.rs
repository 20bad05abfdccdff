//! Deterministic single-process simulator of federated ensemble-game
//! training on spurious-correlation benchmarks.
//!
//! Clients hold heterogeneous datasets whose spurious feature (color or
//! patch position) correlates with the label at a client-specific rate.
//! Training runs best-response dynamics over an ensemble of per-client
//! predictors — sequentially or in parallel, optionally smoothed with
//! per-client buffers of historical predictors, with a fixed or trainable
//! shared representation — against FedAvg/FedSGD baselines.
//!
//! Everything is seeded: the same master seed reproduces every run
//! byte-for-byte, with or without the `parallel` feature (rayon fan-out;
//! enabled by default).

pub mod data;
pub mod error;
pub mod game;
pub mod nn;
pub mod seed;
pub mod server;

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod verify;

pub use error::{Error, Result};
