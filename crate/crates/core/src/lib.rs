//! Hindsight credit assignment on exactly solvable tabular MDPs.
//!
//! The crate pairs every sampled policy-gradient estimator with a dynamic
//! programming oracle, so estimators can be checked against exact gradients
//! and exact hindsight distributions.

pub mod agents;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod hindsight;
pub mod mdp;

pub use error::{Error, Result};
pub use mdp::{PolicyTable, RewardKind, TabularMdp, Trajectory, UpdateEstimate, ValueTable};
