//! Experiment configuration and commands.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_eval, cmd_table5, cmd_train, cmd_worstcase, exit_code, run_command, CommandOutput, EvalReport, Overrides,
    Table5Report, TrainReport, WorstCaseReport,
};
pub use config::{ExperimentConfig, Mode, ScenarioSource};
