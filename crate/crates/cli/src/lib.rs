//! Scenario-driven front end for the `selmut` library: JSON scenarios in,
//! CSV series and a JSON report out.

pub mod run;
pub mod scenario;
pub mod sweep;

pub use run::{run_file, run_scenario, Command, Outcome, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION};
