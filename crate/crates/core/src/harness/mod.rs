//! Config-driven experiments: single trials, recovery and checkpoint
//! sweeps, bound studies and Monte Carlo checks of the recovery identities.

pub mod bound_study;
pub mod config;
pub mod output;
pub mod stats;
pub mod sweep;
pub mod trial;
pub mod verify;
