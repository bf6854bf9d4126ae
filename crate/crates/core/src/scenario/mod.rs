//! Scenario files, the experiment runner, and figure outputs.

pub mod experiment;
pub mod figures;
pub mod spec;

pub use experiment::{
    build_simulation, replay_experiment, run_experiment, ExperimentResult, RunOptions, Summary,
};
pub use spec::{load_scenario, Scenario};
