//! Robot-gated interactive imitation learning.
//!
//! The crate is organised around the pieces a gated learner needs:
//!
//! - [`env`]: the MDP interface, two toy continuous-control tasks and their
//!   analytic supervisors.
//! - [`nn`]: a small dense network with exact backpropagation, shared by the
//!   robot policy and the discrepancy classifier.
//! - [`policy`]: the robot policy, labelled datasets and behaviour cloning.
//! - [`safety`]: the action-discrepancy classifier, its labels and the
//!   threshold calibration used to pick the entry threshold.
//! - [`meta`]: the meta-controller and the BC / DAgger / SafeDAgger /
//!   LazyDAgger loops, including the frozen execution variants.
//! - [`metrics`]: context switches, supervisor actions, burden and cutoff
//!   latency.
//! - [`checkpoint`]: versioned JSON checkpoints for trained networks.

pub mod checkpoint;
pub mod env;
mod error;
pub mod meta;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod safety;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
