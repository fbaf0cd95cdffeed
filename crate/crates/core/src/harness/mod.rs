//! Experiment configuration, runs, sweeps and the reproduction commands.

pub mod commands;
pub mod config;
pub mod run;
pub mod sweep;

pub use commands::{
    bisim_oracle, gen_data, repro_gridworld, repro_losscurve, repro_scaling, solve, sweep, LossCurve, OracleReport, Outputs,
    ScalingReport, LOSS_WINDOW,
};
pub use config::{Algorithm, EnvKind, ExperimentConfig, MixtureKind};
pub use run::{run_algorithm, Environment, Reference, RunOutput, RunRow, SubOptMode};
pub use sweep::{aggregate, emit_plotdata, moving_average, moving_average_increases, paired_t_test, run_grid, PairedTest, SweepResult};
