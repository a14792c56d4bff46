//! Autonomous simulated clients.
//!
//! A [`Client`] owns one identity and its group states and talks to the
//! world only through an [`Env`]: the delivery service, the directory, the
//! user registry and the log sink. The harness decides when each client
//! wakes up, receives a delivery or reaches a decision deadline.

mod actor;
mod config;
mod policy;

pub use actor::{Client, ClientStats, Env, ModKind, ModifyError, Published, StepEvent};
pub use config::{ClientConfig, ConfigError, Paradigm};
pub use policy::{policy_allows, UpdaterPolicy};
