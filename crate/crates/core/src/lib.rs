//! Asynchronous federated learning with increasing per-round sample sizes,
//! delay-bounded consistency and differentially private aggregation.
//!
//! * [`schedules`]: delay functions, sample-size sequences, round step sizes.
//! * [`objective`]: logistic regression, clipping, LIBSVM input.
//! * [`protocol`]: client/server state machines and audits.
//! * [`privacy`]: moments accountant and parameter planner.
//! * [`simulator`]: deterministic discrete-event driver.
//! * [`cli`]: configuration files and command-line entry point.

pub mod cli;
pub mod error;
pub mod objective;
pub mod privacy;
pub mod protocol;
pub mod rng;
pub mod schedules;
pub mod simulator;

pub use error::{Error, Result};
