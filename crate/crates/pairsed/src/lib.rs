//! Configuration, file formats, and experiment drivers around `pairsed-core`.

pub mod config;
pub mod converge;
pub mod formats;
pub mod kernels_check;
pub mod manifest;
pub mod run;

pub use config::{parse_config, ConfigError, ExperimentConfig, Mode};
pub use run::{run, RunError};
