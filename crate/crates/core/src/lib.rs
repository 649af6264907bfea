//! Queueing delay and stability of buffered slotted Aloha under
//! K-exponential backoff.
//!
//! - [`analytic`]: success-probability fixed point, service-time moments,
//!   Pollaczek-Khinchine mean delays and the closed forms for geometric
//!   retransmission and exponential backoff.
//! - [`stability`]: stable and delay-stable regions of the retransmission
//!   factor, the quasi-stability threshold and scenario classification.
//! - [`sim`]: a slot-level simulator of `n` buffered nodes on a collision
//!   channel, with invariant monitors.
//! - [`batch`]: deterministic replication runner, parallel when the
//!   `parallel` feature is on.

pub mod analytic;
pub mod batch;
pub mod error;
pub mod lambert;
pub mod policy;
pub mod sim;
pub mod stability;

pub use error::{Error, Result};
pub use policy::{BackoffPolicy, Cutoff, Model, Scenario, DEFAULT_PHASE_CAP};
