//! Configuration, experiment orchestration, CSV output and the acceptance
//! suite behind the `gk` command.

pub mod config;
pub mod plot;
pub mod run;
pub mod suite;

pub use config::{load_config, parse_config, parse_config_as, ConfigErrors, ExperimentConfig, ExperimentKind};
pub use plot::emit_plotdata;
pub use run::{run_experiment, RunReport, Table};
