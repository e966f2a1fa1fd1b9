//! Experiment pipelines behind the `dropflat` command: config files, run
//! manifests, one pipeline per subcommand and the summary report.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult, ExitKind};
pub use pipeline::{run, Command, Context};
