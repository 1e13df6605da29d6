//! Command-line harness for the iddqn lab: training runs, evaluation,
//! comparisons, sweeps, EPM jobs and the live session server.

pub mod analysis;
pub mod config;
pub mod epm_cmd;
pub mod error;
pub mod eval;
pub mod protocol;
pub mod serve;
pub mod sweep;
pub mod train;

pub use config::RunConfig;
pub use error::{HarnessError, HarnessResult};
