//! Leaky-ReLU restricted Boltzmann machines with Gaussian visible units.
//!
//! The crate covers the model itself ([`model`]), the spectral projection
//! that keeps it normalizable ([`projection`]), Gibbs and leakiness-annealed
//! sampling ([`sampler`]), partition-function oracles and annealed importance
//! sampling ([`partition`]), contrastive-divergence training ([`training`]),
//! and the data/model file formats plus canned experiments used by the `lrbm`
//! binary ([`data`], [`model_file`], [`config`], [`experiments`]).

pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod model;
pub mod model_file;
pub mod parallel;
pub mod partition;
pub mod projection;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use model::{ActivationPattern, GibbsState, HiddenKind, Level, RbmParams};
