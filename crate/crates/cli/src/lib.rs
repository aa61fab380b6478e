//! Experiment harness for `rds-core`: TOML configs, a synthetic school
//! network generator, deterministic parallel replicates and CSV/JSON output.

pub mod config;
pub mod error;
pub mod harness;
pub mod population;
pub mod school;

pub use config::ExperimentConfig;
pub use error::{LabError, LabResult};
pub use harness::{run_experiment, Experiment, ExperimentResult};
pub use population::Population;
pub use school::SyntheticSchoolSpec;
