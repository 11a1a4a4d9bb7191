//! Maximum-entropy reinforcement learning with skill mixtures.
//!
//! The crate provides:
//!
//! - [`nn`]: small dense networks with exact reverse-mode gradients, Adam,
//!   Polyak averaging and a binary checkpoint format.
//! - [`policy`]: diagonal Gaussian policies with tanh squashing.
//! - [`skills`]: the skill set with softmax selection, distillation loss and
//!   relevance updates.
//! - [`sac`]: twin soft critics and the actor losses.
//! - [`agent`]: the training loop for SDSRA and the plain SAC baseline.
//! - [`envs`]: deterministic pendulum and point-mass environments.
//! - [`tabular`]: exact soft policy evaluation/iteration on finite MDPs.
//! - [`harness`]: config files, CSV/SVG output and the verification suites
//!   driven by the `sdsra` binary.

pub mod agent;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod policy;
pub mod sac;
pub mod skills;
pub mod tabular;

pub use error::{Error, Result};
