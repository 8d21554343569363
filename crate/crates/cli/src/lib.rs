//! Config-driven front end for the collapse simulator: experiment
//! orchestration, CSV/JSON artifacts and the run manifest.

pub mod config;
pub mod estimate;
pub mod output;
pub mod run;

pub use config::{load_config, parse_config, parse_config_file, ConfigError, Experiment, RunConfig};
pub use run::{exit_code, run, Outcome, Overrides, RunError, Status, Verdict};
