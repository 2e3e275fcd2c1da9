//! Perturbation and checkpoint-recovery experiments for iterative-convergent
//! solvers.
//!
//! A run is a [`ParameterState`] advanced by a [`Solver`] (QP gradient
//! descent, minibatch softmax regression, ALS matrix factorization or
//! collapsed Gibbs LDA). Perturbations go through [`perturb`], their cost is
//! bounded by [`bounds`], and [`checkpoint`] simulates shard failures with
//! full or partial recovery from a running checkpoint. [`harness`] ties them
//! into config-driven trials and sweeps.

pub mod bounds;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod params;
pub mod perturb;
pub mod rng;
pub mod solvers;

pub use bounds::{BoundedNoiseProfile, ConvergenceProfile, CostReport, SgdBound, SgdRateSchedule};
pub use checkpoint::{CheckpointPolicy, FailureEvent, RecoveryMode, RunningCheckpoint, Selection, ShardStore};
pub use datagen::Dataset;
pub use error::{Result, ScarError};
pub use harness::config::ExperimentConfig;
pub use harness::trial::{Experiment, TrialResult};
pub use params::{NormMetric, ParameterState, ParameterUnit, PartitionMap};
pub use perturb::{Perturbation, PerturbationLedger};
pub use solvers::{ConvergenceCriterion, ModelKind, Solver, SolverConfig};
