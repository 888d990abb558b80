//! Command-line front end for the `pdcnet` simulator.

pub mod config;
pub mod expr;
pub mod run;

pub use config::{parse_config, ConfigErrors, RunConfig};
pub use run::{execute, RunOutput, Summary};
