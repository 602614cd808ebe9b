//! Trace-driven streaming of tiled point cloud video with a federated
//! actor-critic bitrate controller.
//!
//! The crate is organized bottom-up:
//!
//! - [`media`]: tile grid, variant table and the JSON manifest format.
//! - [`traces`]: bandwidth, viewport and compute-capacity traces.
//! - [`prediction`]: EWMA throughput and linear-regression viewport predictors.
//! - [`qoe`]: the distance-dependent QoE model.
//! - [`select`]: FoV culling and budget-constrained per-tile plans.
//! - [`sim`]: the streaming environment.
//! - [`agent`]: actor-critic networks with hand-written gradients.
//! - [`fed`]: federated averaging rounds and the update wire format.
//! - [`scenario`] and [`eval`]: environment descriptions, episode runners and
//!   metric summaries.
//! - [`baselines`]: buffer-based, QUETRA-style and robust MPC controllers.

pub mod agent;
pub mod baselines;
pub mod error;
pub mod eval;
pub mod fed;
pub mod media;
pub mod prediction;
pub mod qoe;
pub mod scenario;
pub mod select;
pub mod sim;
pub mod traces;

pub use error::{Error, Result};
