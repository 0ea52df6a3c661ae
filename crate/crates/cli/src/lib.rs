//! Library surface of the command-line tool: config parsing, job
//! orchestration and output emission, exposed so integration tests can call
//! the same paths the binary does.

pub mod config;
pub mod jobs;
pub mod units;

pub use config::{parse_config, Job, RunConfig};
pub use jobs::{config_hash, run_job};
