//! Ensembles of independent paths, reproducible noise, aggregate statistics
//! and coupled refinement studies.

mod convergence;
mod ensemble;
mod params;
mod rng;

pub use convergence::{
    coarse_increments, convergence_study, log_log_slope, ConvergenceReport, ConvergenceSpec, LevelResult,
};
pub use ensemble::{
    pairwise_sum, run_ensemble, CheckpointStats, EnsembleRun, EnsembleStats, FloorStats, Moment, PathFailure,
    RunOptions,
};
pub use params::{Manifest, Scenario, SimParams, X0Spec};
pub use rng::NoiseStream;
