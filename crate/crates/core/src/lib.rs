//! Signature features and deep backward schemes for path-dependent
//! (reflected) BSDEs: option pricing with lookback-style payoffs and
//! optimal stopping of non-Markovian functionals.

pub mod error;
pub mod estimate;
pub mod market;
pub mod nn;
pub mod oracles;
pub mod path;
pub mod payoffs;
pub mod selftest;
pub mod signature;
pub mod solver;

pub use error::{Error, Result};
pub use estimate::PriceEstimate;
pub use market::{derive_seed, simulate_batch, ModelKind, ModelSpec, PathBatch, TimeGrid};
pub use nn::{AdamConfig, Driver, Mlp};
pub use path::PathView;
pub use payoffs::{Generator, PayoffKind, PayoffSpec};
pub use signature::{path_signature, sig_dimension, stream_checkpoints, TruncatedTensor};
pub use solver::{
    backward_solve, convergence_study, run_experiment, ExperimentReport, FeatureMode, SchemeConfig, SolveResult,
    StudySetting, TrainingConfig,
};
