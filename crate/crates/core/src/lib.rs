//! Deterministic federated-learning simulator for sparse gradient
//! compression.
//!
//! The crate simulates synchronous hub-and-spoke training rounds in which
//! clients compress gradients with one of five policies (top-K, DGC, GMC,
//! DGC with server-side global momentum, DGC with Global Momentum Fusion),
//! meters every transmitted byte through a bit-exact wire codec, and records
//! accuracy alongside communication cost. Everything is deterministic given
//! a seed: same config, same bytes out.

pub mod codec;
pub mod compression;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod runner;
pub mod schedule;
pub mod vector;

pub use error::{Error, Result};
