//! Monitoring policies for toxicity detection in online matches.
//!
//! - [`linucb`]: the LinUCB monitor/not-monitor policy with daily batch updates.
//! - [`baselines`]: deterministic and probabilistic Explore-Then-Commit.
//! - [`synth`]: a seeded synthetic match stream with a logistic toxicity model.
//! - [`harness`]: day-batched episodes, share calibration and sweeps.
//! - [`io`]: CSV schemas, manifests and result files.

pub mod baselines;
pub mod error;
pub mod features;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod linucb;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
