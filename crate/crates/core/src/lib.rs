//! Deterministic simulator for predictive clustering of vehicles on a road
//! grid.
//!
//! [`scenario::run_scenario`] runs one configuration end to end: traffic
//! from [`mobility`] on a [`network`], every vehicle running the
//! [`protocol`] state machine over the [`channel`], and the results
//! summarised by [`metrics`]. [`sweep`] repeats that over policies,
//! velocities and seeds.

pub mod baselines;
pub mod channel;
pub mod geom;
pub mod invariants;
pub mod metrics;
pub mod mobility;
pub mod network;
pub mod prediction;
pub mod protocol;
pub mod scenario;
pub mod sweep;

/// Vehicles are numbered from 1 in order of arrival.
pub type VehicleId = u32;
