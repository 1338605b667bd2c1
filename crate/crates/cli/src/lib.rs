//! Batch driver for Trefftz studies: configuration, study runs, conditioning
//! sweeps and field sampling.

pub mod config;
pub mod run;

pub use config::{ConfigError, RunConfig};
pub use run::{run, run_conditioning, sample_field, RunError, Solved, StudyReport};
