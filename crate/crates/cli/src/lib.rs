//! Library surface of the CLI crate: experiment configuration and execution,
//! shared by the binary and the acceptance suite.

pub mod experiment;

pub use experiment::{
    records_to_csv, run_experiment, summary_to_string, ExactMethod, ExperimentConfig,
    ExperimentOutcome, GraphSpec, MuMode, SummaryRow, TrialRecord, CSV_HEADER,
};
