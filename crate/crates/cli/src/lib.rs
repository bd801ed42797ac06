//! Command line pipelines and the HTTP session service.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod server;

pub use config::RunConfig;
pub use error::CliError;
